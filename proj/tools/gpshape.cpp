#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "gp/checkpoint.hpp"
#include "gp/config.hpp"
#include "gp/experiment.hpp"
#include "gp/invariance.hpp"
#include "gp/ppo.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitRuntime = 1;
constexpr int kExitConfig = 2;

int cmd_train(const std::string& config_path, const std::vector<std::string>& overrides, int jobs) {
  std::ifstream in(config_path);
  if (!in) {
    std::cerr << "config: cannot open " << config_path << "\n";
    return kExitConfig;
  }
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    std::cerr << "config: " << config_path << ": " << e.what() << "\n";
    return kExitConfig;
  }
  for (const std::string& raw : overrides) {
    std::string assignment = raw;
    if (assignment.rfind("--", 0) == 0) assignment = assignment.substr(2);
    gp::apply_config_override(j, assignment);
  }
  const gp::ExperimentConfig cfg = gp::ExperimentConfig::from_json(j);
  const auto results = gp::run_experiment(cfg, jobs);
  for (std::size_t i = 0; i < results.size(); ++i) {
    std::printf("seed %llu: final eval %.2f +/- %.2f  ->  %s\n",
                static_cast<unsigned long long>(cfg.seeds[i]), results[i].final_eval.mean,
                results[i].final_eval.std, results[i].run_dir.c_str());
  }
  return kExitOk;
}

int cmd_compare(const std::vector<std::string>& run_dirs, const std::string& curves_dir) {
  const auto variants = gp::compare_runs(run_dirs);
  std::cout << gp::comparison_table(variants);
  if (!curves_dir.empty()) {
    std::filesystem::create_directories(curves_dir);
    for (const auto& v : variants) {
      const std::string path = curves_dir + "/curve_" + v.label + ".csv";
      gp::write_curve_csv(v, path);
      std::cout << "curve: " << path << "\n";
    }
  }
  return kExitOk;
}

int cmd_attention(const std::string& checkpoint, const std::string& config_path, int episodes,
                  std::uint64_t seed, const std::string& out_csv) {
  const gp::ExperimentConfig cfg = gp::ExperimentConfig::from_file(config_path);
  if (cfg.shaping.family != "gat") {
    std::cerr << "attention: checkpoint config uses shaping.family=" << cfg.shaping.family
              << ", attention extraction requires gat\n";
    return kExitRuntime;
  }
  const auto state = gp::load_checkpoint(checkpoint);
  gp::Rng init_rng(0);
  gp::PolicyNet policy(cfg.env.obs_dim(), init_rng);
  policy.load_state(state);
  gp::PotentialConfig pc;
  pc.family = gp::GnnFamily::GAT;
  pc.hidden = cfg.shaping.hidden;
  pc.heads = cfg.shaping.heads;
  pc.eta = cfg.shaping.eta;
  gp::Rng pot_rng(0);
  gp::PotentialModel potential(pc, pot_rng);
  potential.load_state(state);

  const auto analysis = gp::analyze_attention(policy, potential, cfg.env, episodes, seed, out_csv);
  std::printf("transitions analyzed: %zu\n", analysis.transition_count);
  std::printf("attention histogram (20 bins, width %.6f):\n", analysis.bin_width);
  for (std::size_t b = 0; b < analysis.histogram.size(); ++b) {
    std::printf("  [%5.3f, %5.3f) %d\n", b * analysis.bin_width, (b + 1) * analysis.bin_width,
                analysis.histogram[b]);
  }
  std::printf("goal-visible rate: base %.4f, top decile %.4f, ratio %.3f\n", analysis.base_goal_rate,
              analysis.top_decile_goal_rate, analysis.concentration_ratio);
  std::printf("top transitions:\n");
  for (const auto& e : analysis.top_edges) {
    std::printf("  (%d,%d,d%d) -> (%d,%d,d%d)  a=%.4f  goal_visible=%d  phase=%s\n", e.src.x, e.src.y,
                e.src.dir, e.dst.x, e.dst.y, e.dst.dir, e.value, e.goal_visible ? 1 : 0,
                e.phase.c_str());
  }
  if (!out_csv.empty()) std::printf("csv: %s\n", out_csv.c_str());
  return kExitOk;
}

int cmd_oracle_invariance(std::uint64_t seed) {
  const gp::InvarianceReport report = gp::run_invariance_check(seed);
  for (std::size_t d = 0; d < report.potential_draws.size(); ++d) {
    std::printf("potential draw %2zu (scale %6.1f): %s\n", d, report.potential_draws[d].scale,
                report.potential_draws[d].policies_match ? "greedy policy unchanged" : "MISMATCH");
  }
  std::printf("negative control: non-potential shaping changed the greedy policy in %d/%zu draws\n",
              report.control_changes, report.control_draws.size());
  const bool ok = report.all_potential_match && report.control_detected;
  std::printf("oracle-invariance: %s\n", ok ? "PASS" : "FAIL");
  return ok ? kExitOk : kExitRuntime;
}

int cmd_dump_env(const std::string& name, std::uint64_t seed, int size, int view) {
  gp::EnvSpec spec;
  spec.name = name;
  spec.maze_size = size;
  spec.view = view;
  spec.validate();
  const gp::GridWorld world = gp::make_env(spec, seed);
  std::cout << world.dump_text();
  std::printf("agent (%d,%d) facing %d, goal (%d,%d), max_steps %d, layout %016llx\n", world.agent_x(),
              world.agent_y(), static_cast<int>(world.agent_dir()), world.goal_x(), world.goal_y(),
              world.max_steps(), static_cast<unsigned long long>(world.layout_hash()));
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Graph-potential reward shaping experiments"};
  app.require_subcommand(1);

  auto* train = app.add_subcommand("train", "Run a training config across its seeds");
  std::string config_path;
  int jobs = 1;
  train->add_option("config", config_path, "Experiment config JSON")->required();
  train->add_option("--jobs", jobs, "Seed-level worker threads");
  train->allow_extras();  // dotted overrides such as --ppo.gamma=0.98

  auto* compare = app.add_subcommand("compare", "Aggregate completed runs into a table and curves");
  std::vector<std::string> run_dirs;
  std::string curves_dir;
  compare->add_option("runs", run_dirs, "Run directories (one per variant)")->required();
  compare->add_option("-o,--curves", curves_dir, "Directory for plot-ready curve CSVs");

  auto* attention = app.add_subcommand("attention", "Dump and analyze learned GAT attention");
  std::string checkpoint, att_config, att_csv = "attention.csv";
  int att_episodes = 40;
  std::uint64_t att_seed = 7;
  attention->add_option("--checkpoint", checkpoint, "Checkpoint prefix (without .bin/.json)")->required();
  attention->add_option("--config", att_config, "Config JSON the checkpoint was trained with")->required();
  attention->add_option("--episodes", att_episodes, "Frozen-policy rollout episodes");
  attention->add_option("--seed", att_seed, "Rollout seed");
  attention->add_option("--out", att_csv, "Attention CSV path");

  auto* oracle = app.add_subcommand("oracle-invariance", "Policy-invariance check on a tabular MDP");
  std::uint64_t oracle_seed = 1;
  oracle->add_option("--seed", oracle_seed, "Random potential seed");

  auto* dump = app.add_subcommand("dump-env", "Print a generated environment layout");
  std::string env_name = "four_rooms";
  std::uint64_t dump_seed = 1;
  int maze_size = 13, view = 7;
  dump->add_option("--env", env_name, "four_rooms or maze");
  dump->add_option("--seed", dump_seed, "Generation seed");
  dump->add_option("--size", maze_size, "Maze size (odd)");
  dump->add_option("--view", view, "Observation window (odd)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (train->parsed()) return cmd_train(config_path, train->remaining(), jobs);
    if (compare->parsed()) return cmd_compare(run_dirs, curves_dir);
    if (attention->parsed())
      return cmd_attention(checkpoint, att_config, att_episodes, att_seed, att_csv);
    if (oracle->parsed()) return cmd_oracle_invariance(oracle_seed);
    if (dump->parsed()) return cmd_dump_env(env_name, dump_seed, maze_size, view);
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitOk;
}
