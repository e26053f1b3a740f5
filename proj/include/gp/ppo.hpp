#ifndef GP_PPO_HPP_
#define GP_PPO_HPP_

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "gp/env.hpp"
#include "gp/gnn.hpp"
#include "gp/graph.hpp"
#include "gp/policy.hpp"
#include "gp/rng.hpp"
#include "gp/tensor.hpp"

namespace gp {

struct PpoConfig {
  double gamma = 0.99;
  double clip_eps = 0.2;
  int epochs = 4;
  int minibatches = 4;
  double value_coef = 0.5;
  double entropy_coef = 0.05;
  double lr = 1.5e-4;
  int n_envs = 16;
  int rollout_steps = 128;
  std::int64_t total_steps = 400000;
  double shaping_scale = 1.0;

  void validate() const;
};

struct ShapingConfig {
  std::string family = "none";  // none | gcn | gat | sage
  double eta = 10.0;
  std::string l0 = "bce";  // bce | literal
  double lr = 1e-3;
  int steps_per_update = 5;
  int max_nodes = 512;
  bool unique_nodes = false;
  std::size_t hidden = 64;
  std::size_t heads = 4;

  bool enabled() const { return family != "none"; }
  void validate() const;
};

struct EnvSpec {
  std::string name = "four_rooms";  // four_rooms | maze
  int maze_size = 13;
  int view = 7;

  std::size_t obs_dim() const { return static_cast<std::size_t>(Observation::kChannels) * view * view; }
  void validate() const;
};

GridWorld make_env(const EnvSpec& spec, std::uint64_t seed);

// shaped = raw + scale * (gamma * phi(s') * (1 - done) - phi(s)); the
// next-state potential is zeroed at terminals.
double apply_shaping(double raw_reward, double phi_s, double phi_s_next, double gamma, bool done,
                     double scale);

// Fixed-length record of one rollout across all parallel environments.
// Index layout is (env * rollout_steps + t).
struct RolloutBuffer {
  int n_envs = 0;
  int steps = 0;
  std::size_t obs_dim = 0;

  std::vector<double> obs;
  std::vector<int> actions;
  std::vector<double> log_probs;
  std::vector<double> values;
  std::vector<double> raw_rewards;
  std::vector<double> shaped_rewards;
  std::vector<std::uint8_t> dones;
  std::vector<double> embeddings;
  std::vector<StateId> state_ids;
  std::vector<StateId> next_state_ids;
  std::vector<std::int64_t> episode_serials;
  std::vector<double> bootstrap_values;  // per env: V of the state after the final step

  void reset(int n_envs, int steps, std::size_t obs_dim);
  std::size_t idx(int env, int t) const { return static_cast<std::size_t>(env) * steps + t; }
  std::size_t total() const { return static_cast<std::size_t>(n_envs) * steps; }
};

struct AdvantageResult {
  std::vector<double> advantages;
  std::vector<double> returns;
};

// One-step advantage on shaped rewards, with V(s') = 0 at terminals.
AdvantageResult compute_advantages(const RolloutBuffer& buffer, double gamma);

struct PpoStats {
  double policy_loss = 0.0;
  double value_loss = 0.0;
  double entropy = 0.0;
  double clip_frac = 0.0;
};

// Clipped-surrogate update: epochs x minibatches Adam steps on the policy.
// Advantages are normalized once per update.
PpoStats ppo_update(PolicyNet& policy, Adam& optimizer, const RolloutBuffer& buffer,
                    const AdvantageResult& adv, const PpoConfig& cfg, Rng& shuffle_rng);

struct MetricsRow {
  std::int64_t step = 0;       // rollout/update index
  std::int64_t env_steps = 0;  // cumulative environment steps
  double mean_return_raw = 0.0;
  double std_return = 0.0;
  double mean_ep_len = 0.0;
  double policy_loss = 0.0;
  double value_loss = 0.0;
  double entropy = 0.0;
  double clip_frac = 0.0;
  double gnn_loss = 0.0;
  double phi_mean = 0.0;
  double phi_std = 0.0;
};

struct EvalResult {
  double mean = 0.0;  // raw return scaled to [0, 100]
  double std = 0.0;
  int episodes = 0;
};

// Greedy-argmax evaluation on raw (unshaped) rewards, scaled x100.
EvalResult evaluate(const PolicyNet& policy, const EnvSpec& spec, int episodes, std::uint64_t seed);

// Full training loop: parallel rollouts with reward shaping, PPO updates, and
// a potential-model update for every finished episode.
class Trainer {
 public:
  Trainer(const EnvSpec& env_spec, const PpoConfig& ppo, const ShapingConfig& shaping,
          std::uint64_t master_seed);

  // Runs until total_steps; invokes on_row after every rollout when given.
  std::vector<MetricsRow> train(const std::function<void(const MetricsRow&)>& on_row = {});

  PolicyNet& policy() { return *policy_; }
  const PolicyNet& policy() const { return *policy_; }
  PotentialModel* potential() { return potential_.get(); }
  const PotentialModel* potential() const { return potential_.get(); }
  const TransitionGraph& graph(int env) const { return envs_[env].graph; }
  const EnvSpec& env_spec() const { return env_spec_; }

 private:
  struct EnvSlot {
    GridWorld world;
    Rng rng;
    TransitionGraph graph{kEmbeddingDim};
    Trajectory traj;
    StateId current_id;
    bool has_pending = false;  // transition from the previous step awaiting features
    StateId pending_from;
    std::vector<double> pending_emb;
    bool pending_goal_visible = false;
    double episode_return = 0.0;
    int episode_len = 0;
    std::int64_t episode_serial = 0;
    std::uint64_t uid_counter = 0;
    std::vector<TransitionGraph> stashed;
    std::unordered_map<std::int64_t, int> serial_to_stash;
    std::vector<std::int64_t> finished_serials;

    EnvSlot(GridWorld w, Rng r) : world(std::move(w)), rng(r) {}
  };

  StateId stamp_state(EnvSlot& slot) const;
  void begin_episode(EnvSlot& slot, const std::vector<double>& emb, bool goal_visible);
  void handle_episode_end(EnvSlot& slot, double reward);
  void collect_rollout(RolloutBuffer& buffer);
  void apply_shaping_to_buffer(RolloutBuffer& buffer, double& phi_mean, double& phi_std);
  double run_gnn_updates();

  EnvSpec env_spec_;
  PpoConfig ppo_;
  ShapingConfig shaping_;
  bool shaping_active_ = false;
  std::uint64_t master_seed_ = 0;
  std::unique_ptr<PolicyNet> policy_;
  std::unique_ptr<Adam> policy_opt_;
  std::unique_ptr<PotentialModel> potential_;
  std::vector<EnvSlot> envs_;
  Rng shuffle_rng_{0};
  std::int64_t env_steps_ = 0;
  std::int64_t rollout_index_ = 0;
  std::vector<double> window_returns_;
  std::vector<double> window_lengths_;
  double carry_mean_return_ = 0.0;
  double carry_std_return_ = 0.0;
  double carry_mean_len_ = 0.0;
};

}  // namespace gp

#endif  // GP_PPO_HPP_
