#ifndef GP_EXPERIMENT_HPP_
#define GP_EXPERIMENT_HPP_

#include <cstdint>
#include <string>
#include <vector>

#include "gp/config.hpp"
#include "gp/gnn.hpp"
#include "gp/policy.hpp"
#include "gp/ppo.hpp"

namespace gp {

// Shortest-exact decimal form used for all CSV floats, so reruns with
// identical state reproduce files byte-for-byte.
std::string format_double(double v);

std::string metrics_csv_header();
std::string metrics_csv_line(const MetricsRow& row);
std::vector<MetricsRow> read_metrics_csv(const std::string& path);

struct RunResult {
  std::string run_dir;
  EvalResult final_eval;
  double tail_mean = 0.0;  // over the last tenth of the learning curve
  double tail_std = 0.0;
  std::vector<MetricsRow> rows;
};

// One seed: trains, writes metrics.csv, checkpoint.{bin,json}, summary.json.
RunResult run_single(const ExperimentConfig& cfg, std::uint64_t seed, const std::string& run_dir);

// All seeds of a config into output_dir/seed_<seed>/, optionally in parallel
// worker threads; writes config.json alongside.
std::vector<RunResult> run_experiment(const ExperimentConfig& cfg, int jobs = 1);

struct VariantStats {
  std::string label;
  int n_seeds = 0;
  double final_mean = 0.0;  // across-seed mean of per-seed greedy-eval means, [0,100]
  double final_std = 0.0;
  double tail_mean = 0.0;  // across-seed mean of training-curve tails, [0,100]
  double tail_std = 0.0;
  std::vector<std::int64_t> curve_steps;
  std::vector<double> curve_mean;
  std::vector<double> curve_std;
  double auc = 0.0;  // trapezoid over (env_steps, mean raw return)
};

// Aggregates completed run directories (one per variant). All runs must share
// the same env_steps grid; mismatches raise an alignment error.
std::vector<VariantStats> compare_runs(const std::vector<std::string>& variant_dirs);

void write_curve_csv(const VariantStats& stats, const std::string& path);
std::string comparison_table(const std::vector<VariantStats>& variants);

struct AttentionAnalysis {
  std::size_t transition_count = 0;
  std::vector<int> histogram;  // 20 equal bins over [0, max attention]
  double bin_width = 0.0;
  double base_goal_rate = 0.0;        // fraction of transitions entering a goal-visible state
  double top_decile_goal_rate = 0.0;  // same fraction within the top attention decile
  double concentration_ratio = 0.0;   // top_decile_goal_rate / base_goal_rate

  struct TopEdge {
    StateId src;
    StateId dst;
    double value = 0.0;
    bool goal_visible = false;
    std::string phase;  // start | middle | pre_goal
  };
  std::vector<TopEdge> top_edges;
};

// Rolls out the frozen policy, builds transition graphs, and analyzes the
// layer-2 attention over real transitions. Writes the per-edge CSV when
// csv_path is non-empty.
AttentionAnalysis analyze_attention(const PolicyNet& policy, const PotentialModel& potential,
                                    const EnvSpec& spec, int episodes, std::uint64_t seed,
                                    const std::string& csv_path);

}  // namespace gp

#endif  // GP_EXPERIMENT_HPP_
