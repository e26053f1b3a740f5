#include "gp/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <thread>
#include <unordered_map>

#include "gp/checkpoint.hpp"

namespace fs = std::filesystem;

namespace gp {

namespace {

double mean_of(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

double std_of(const std::vector<double>& v, double mean) {
  if (v.empty()) return 0.0;
  double s = 0.0;
  for (double x : v) s += (x - mean) * (x - mean);
  return std::sqrt(s / static_cast<double>(v.size()));
}

}  // namespace

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string metrics_csv_header() {
  return "step,env_steps,mean_return_raw,std_return,mean_ep_len,policy_loss,value_loss,entropy,"
         "clip_frac,gnn_loss,phi_mean,phi_std";
}

std::string metrics_csv_line(const MetricsRow& r) {
  std::string line = std::to_string(r.step) + "," + std::to_string(r.env_steps);
  for (double v : {r.mean_return_raw, r.std_return, r.mean_ep_len, r.policy_loss, r.value_loss,
                   r.entropy, r.clip_frac, r.gnn_loss, r.phi_mean, r.phi_std}) {
    line += ",";
    line += format_double(v);
  }
  return line;
}

std::vector<MetricsRow> read_metrics_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open metrics file " + path);
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("empty metrics file " + path);
  if (line != metrics_csv_header()) throw std::runtime_error("unrecognized metrics header in " + path);
  std::vector<MetricsRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string field;
    std::vector<std::string> fields;
    while (std::getline(ss, field, ',')) fields.push_back(field);
    if (fields.size() != 12) throw std::runtime_error("bad metrics row in " + path + ": " + line);
    MetricsRow r;
    r.step = std::stoll(fields[0]);
    r.env_steps = std::stoll(fields[1]);
    r.mean_return_raw = std::stod(fields[2]);
    r.std_return = std::stod(fields[3]);
    r.mean_ep_len = std::stod(fields[4]);
    r.policy_loss = std::stod(fields[5]);
    r.value_loss = std::stod(fields[6]);
    r.entropy = std::stod(fields[7]);
    r.clip_frac = std::stod(fields[8]);
    r.gnn_loss = std::stod(fields[9]);
    r.phi_mean = std::stod(fields[10]);
    r.phi_std = std::stod(fields[11]);
    rows.push_back(r);
  }
  return rows;
}

RunResult run_single(const ExperimentConfig& cfg, std::uint64_t seed, const std::string& run_dir) {
  fs::create_directories(run_dir);
  std::ofstream metrics(run_dir + "/metrics.csv", std::ios::trunc);
  if (!metrics) throw std::runtime_error("cannot open " + run_dir + "/metrics.csv");
  metrics << metrics_csv_header() << "\n";

  Trainer trainer(cfg.env, cfg.ppo, cfg.shaping, seed);
  RunResult result;
  result.run_dir = run_dir;
  result.rows = trainer.train([&](const MetricsRow& row) { metrics << metrics_csv_line(row) << "\n"; });
  metrics.close();

  auto tensors = trainer.policy().named_parameters();
  if (trainer.potential() != nullptr) {
    for (auto& nt : trainer.potential()->named_parameters()) tensors.push_back(nt);
  }
  save_checkpoint(run_dir + "/checkpoint", tensors);

  result.final_eval =
      evaluate(trainer.policy(), cfg.env, cfg.eval_episodes, Rng::derive_seed(seed, 9000));
  std::vector<double> tail;
  const std::size_t n_tail = std::max<std::size_t>(1, result.rows.size() / 10);
  for (std::size_t i = result.rows.size() - std::min(n_tail, result.rows.size());
       i < result.rows.size(); ++i) {
    tail.push_back(result.rows[i].mean_return_raw);
  }
  result.tail_mean = mean_of(tail);
  result.tail_std = std_of(tail, result.tail_mean);

  nlohmann::json summary;
  summary["seed"] = seed;
  summary["env"] = cfg.env.name;
  summary["shaping"] = cfg.shaping.family;
  summary["shaping_scale"] = cfg.ppo.shaping_scale;
  summary["total_steps"] = cfg.ppo.total_steps;
  summary["final_eval"] = {{"mean", result.final_eval.mean},
                           {"std", result.final_eval.std},
                           {"episodes", result.final_eval.episodes}};
  summary["train_tail"] = {{"mean", result.tail_mean}, {"std", result.tail_std}};
  std::ofstream js(run_dir + "/summary.json", std::ios::trunc);
  js << summary.dump(2) << "\n";
  return result;
}

std::vector<RunResult> run_experiment(const ExperimentConfig& cfg, int jobs) {
  fs::create_directories(cfg.output_dir);
  {
    std::ofstream js(cfg.output_dir + "/config.json", std::ios::trunc);
    js << cfg.to_json().dump(2) << "\n";
  }
  std::vector<RunResult> results(cfg.seeds.size());
  if (jobs < 1) jobs = 1;
  auto worker = [&](std::size_t first) {
    for (std::size_t i = first; i < cfg.seeds.size(); i += static_cast<std::size_t>(jobs)) {
      const std::string dir = cfg.output_dir + "/seed_" + std::to_string(cfg.seeds[i]);
      results[i] = run_single(cfg, cfg.seeds[i], dir);
    }
  };
  if (jobs == 1) {
    worker(0);
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < jobs; ++t) pool.emplace_back(worker, static_cast<std::size_t>(t));
    for (auto& th : pool) th.join();
  }
  return results;
}

std::vector<VariantStats> compare_runs(const std::vector<std::string>& variant_dirs) {
  if (variant_dirs.empty()) throw std::invalid_argument("compare: no run directories given");
  std::vector<VariantStats> variants;
  std::vector<std::int64_t> reference_grid;
  for (const std::string& dir : variant_dirs) {
    VariantStats v;
    v.label = fs::path(dir).filename().string();
    if (v.label.empty()) v.label = dir;
    std::vector<std::string> seed_dirs;
    for (const auto& entry : fs::directory_iterator(dir)) {
      if (entry.is_directory() && entry.path().filename().string().rfind("seed_", 0) == 0) {
        seed_dirs.push_back(entry.path().string());
      }
    }
    std::sort(seed_dirs.begin(), seed_dirs.end());
    if (seed_dirs.empty()) throw std::runtime_error("compare: no seed_* directories under " + dir);

    std::vector<double> finals;
    std::vector<double> tails;
    std::vector<std::vector<double>> curves;
    for (const std::string& sd : seed_dirs) {
      std::ifstream js(sd + "/summary.json");
      if (!js) throw std::runtime_error("compare: missing summary.json in " + sd);
      nlohmann::json summary;
      js >> summary;
      finals.push_back(summary.at("final_eval").at("mean").get<double>());
      tails.push_back(100.0 * summary.at("train_tail").at("mean").get<double>());

      const auto rows = read_metrics_csv(sd + "/metrics.csv");
      std::vector<std::int64_t> grid;
      std::vector<double> curve;
      for (const MetricsRow& r : rows) {
        grid.push_back(r.env_steps);
        curve.push_back(r.mean_return_raw);
      }
      if (reference_grid.empty()) {
        reference_grid = grid;
      } else if (grid != reference_grid) {
        throw std::runtime_error("compare: alignment error, env_steps grid of " + sd +
                                 " does not match the first run");
      }
      curves.push_back(std::move(curve));
    }
    v.n_seeds = static_cast<int>(seed_dirs.size());
    v.final_mean = mean_of(finals);
    v.final_std = std_of(finals, v.final_mean);
    v.tail_mean = mean_of(tails);
    v.tail_std = std_of(tails, v.tail_mean);
    v.curve_steps = reference_grid;
    v.curve_mean.resize(reference_grid.size());
    v.curve_std.resize(reference_grid.size());
    for (std::size_t t = 0; t < reference_grid.size(); ++t) {
      std::vector<double> col;
      col.reserve(curves.size());
      for (const auto& c : curves) col.push_back(c[t]);
      v.curve_mean[t] = mean_of(col);
      v.curve_std[t] = std_of(col, v.curve_mean[t]);
    }
    for (std::size_t t = 1; t < reference_grid.size(); ++t) {
      const double width = static_cast<double>(reference_grid[t] - reference_grid[t - 1]);
      v.auc += 0.5 * (v.curve_mean[t] + v.curve_mean[t - 1]) * width;
    }
    variants.push_back(std::move(v));
  }
  return variants;
}

void write_curve_csv(const VariantStats& stats, const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path);
  out << "env_steps,mean,std\n";
  for (std::size_t t = 0; t < stats.curve_steps.size(); ++t) {
    out << stats.curve_steps[t] << "," << format_double(stats.curve_mean[t]) << ","
        << format_double(stats.curve_std[t]) << "\n";
  }
}

std::string comparison_table(const std::vector<VariantStats>& variants) {
  std::ostringstream os;
  os << "variant                         seeds  eval (mean +/- std)   train-tail (mean +/- std)      auc\n";
  for (const VariantStats& v : variants) {
    char line[200];
    std::snprintf(line, sizeof(line), "%-30s %5d  %8.2f +/- %-8.2f %8.2f +/- %-8.2f %14.1f\n",
                  v.label.c_str(), v.n_seeds, v.final_mean, v.final_std, v.tail_mean, v.tail_std,
                  v.auc);
    os << line;
  }
  return os.str();
}

namespace {

struct EdgeKeyHash {
  std::size_t operator()(const std::pair<StateId, StateId>& p) const {
    return StateIdHash{}(p.first) * 1000003u ^ StateIdHash{}(p.second);
  }
};

const char* dir_name(int d) {
  static const char* names[4] = {"N", "E", "S", "W"};
  return d >= 0 && d < 4 ? names[d] : "?";
}

}  // namespace

AttentionAnalysis analyze_attention(const PolicyNet& policy, const PotentialModel& potential,
                                    const EnvSpec& spec, int episodes, std::uint64_t seed,
                                    const std::string& csv_path) {
  if (potential.family() != GnnFamily::GAT) {
    throw std::logic_error("attention analysis requires a gat potential model");
  }
  Rng rng(Rng::derive_seed(seed, 42));
  TransitionGraph graph(kEmbeddingDim);
  std::vector<AttentionEdge> entries;
  // phase of each transition's first occurrence within its episode
  std::unordered_map<std::pair<StateId, StateId>, std::string, EdgeKeyHash> phase_of;

  const std::size_t obs_dim = spec.obs_dim();
  for (int ep = 0; ep < episodes; ++ep) {
    GridWorld world = make_env(spec, rng.next_u64());
    std::vector<std::pair<StateId, StateId>> episode_edges;
    StateId prev_id = world.state_id();
    Observation prev_obs = world.observe(spec.view);
    PolicyOutput prev_out = policy.forward(Tensor::from_vector(1, obs_dim, prev_obs.data));
    std::vector<double> prev_emb = prev_out.embeddings.values();
    bool success = false;
    while (!world.done()) {
      std::vector<double> logits = prev_out.logits.values();
      const ActionSample action = sample_action(logits, rng);
      const StepResult sr = world.step(static_cast<Action>(action.action));
      success = sr.reward > 0.0;
      const StateId cur_id = world.state_id();
      const Observation cur_obs = world.observe(spec.view);
      const PolicyOutput cur_out = policy.forward(Tensor::from_vector(1, obs_dim, cur_obs.data));
      std::vector<double> cur_emb = cur_out.embeddings.values();
      graph.add_transition(prev_id, cur_id, prev_emb, cur_emb, prev_obs.goal_visible(),
                           cur_obs.goal_visible());
      episode_edges.emplace_back(prev_id, cur_id);
      prev_id = cur_id;
      prev_obs = cur_obs;
      prev_out = cur_out;
      prev_emb = std::move(cur_emb);
    }
    const std::size_t len = episode_edges.size();
    for (std::size_t t = 0; t < len; ++t) {
      std::string phase = "middle";
      if (t < len / 5) phase = "start";
      if (success && t >= len - std::max<std::size_t>(1, len / 5)) phase = "pre_goal";
      phase_of.try_emplace(episode_edges[t], phase);
    }
    const bool last_episode = ep + 1 == episodes;
    const bool layout_persists = spec.name == "four_rooms";
    if (!layout_persists || last_episode) {
      if (graph.node_count() > 0) {
        for (const AttentionEdge& e : potential.extract_attention(graph)) entries.push_back(e);
      }
      if (!layout_persists) graph.clear();
    }
  }

  // keep only attention on recorded transitions (drop synthetic self edges)
  std::vector<AttentionEdge> transitions;
  for (const AttentionEdge& e : entries) {
    if (phase_of.count({e.src, e.dst})) transitions.push_back(e);
  }

  AttentionAnalysis analysis;
  analysis.transition_count = transitions.size();
  analysis.histogram.assign(20, 0);
  if (!transitions.empty()) {
    double max_value = 0.0;
    for (const AttentionEdge& e : transitions) max_value = std::max(max_value, e.value);
    analysis.bin_width = max_value > 0.0 ? max_value / 20.0 : 1.0;
    for (const AttentionEdge& e : transitions) {
      int bin = static_cast<int>(e.value / analysis.bin_width);
      analysis.histogram[std::min(bin, 19)] += 1;
    }
    std::vector<std::size_t> order(transitions.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return transitions[a].value > transitions[b].value;
    });
    std::size_t goal_total = 0;
    for (const AttentionEdge& e : transitions) goal_total += e.goal_visible ? 1 : 0;
    analysis.base_goal_rate = static_cast<double>(goal_total) / transitions.size();
    const std::size_t top = std::max<std::size_t>(1, transitions.size() / 10);
    std::size_t goal_top = 0;
    for (std::size_t i = 0; i < top; ++i) goal_top += transitions[order[i]].goal_visible ? 1 : 0;
    analysis.top_decile_goal_rate = static_cast<double>(goal_top) / static_cast<double>(top);
    analysis.concentration_ratio =
        analysis.base_goal_rate > 0.0 ? analysis.top_decile_goal_rate / analysis.base_goal_rate : 0.0;
    for (std::size_t i = 0; i < std::min<std::size_t>(10, order.size()); ++i) {
      const AttentionEdge& e = transitions[order[i]];
      analysis.top_edges.push_back(AttentionAnalysis::TopEdge{
          e.src, e.dst, e.value, e.goal_visible, phase_of.at({e.src, e.dst})});
    }
  }

  if (!csv_path.empty()) {
    std::ofstream out(csv_path, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open " + csv_path);
    out << "src_x,src_y,src_dir,dst_x,dst_y,dst_dir,head,attention,goal_visible_flag\n";
    for (const AttentionEdge& e : transitions) {
      out << e.src.x << "," << e.src.y << "," << dir_name(e.src.dir) << "," << e.dst.x << ","
          << e.dst.y << "," << dir_name(e.dst.dir) << "," << e.head << "," << format_double(e.value)
          << "," << (e.goal_visible ? 1 : 0) << "\n";
    }
  }
  return analysis;
}

}  // namespace gp
