#ifndef GP_GRAPH_HPP_
#define GP_GRAPH_HPP_

#include <cstdint>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include "gp/env.hpp"
#include "gp/tensor.hpp"

namespace gp {

// One episode's worth of visited states. Rewards are per transition, so
// `rewards[t]` belongs to the move from `states[t]` to `states[t+1]`; the env
// guarantees they are nonzero only at the final index.
struct Trajectory {
  std::vector<StateId> states;
  std::vector<std::vector<double>> embeddings;  // one row per state
  std::vector<bool> goal_visible;               // one flag per state
  std::vector<double> rewards;                  // one per transition

  std::size_t length() const { return states.size(); }
};

// Dense view consumed by the potential model: symmetrized 0/1 adjacency,
// node feature matrix, and the base-case label set.
struct DenseGraph {
  Tensor adjacency;
  Tensor features;
  std::vector<std::pair<int, int>> base_cases;  // (node index, label in {0,1})
};

// Per-environment-instance directed graph of visited states. Node features
// hold the newest encoder embedding seen for the state; edges are
// deduplicated; the base-case set collects labeled first/last states of
// finished episodes. Switching to a new layout hash resets the graph, since
// nodes from another map are unrelated states.
class TransitionGraph {
 public:
  explicit TransitionGraph(std::size_t feature_dim = 64) : feature_dim_(feature_dim) {}

  std::size_t node_count() const { return ids_.size(); }
  std::size_t edge_count() const { return edges_.size(); }
  std::size_t feature_dim() const { return feature_dim_; }

  int find_node(const StateId& id) const;
  const StateId& node_id(int node) const { return ids_[node]; }
  bool node_goal_visible(int node) const { return goal_visible_[node] != 0; }
  const std::vector<std::pair<int, int>>& edges() const { return edges_; }
  const std::vector<std::pair<int, int>>& base_cases() const { return base_cases_; }

  // Registers the node if new (resetting first when the layout hash changed),
  // always refreshing its feature row and goal-visibility flag.
  int touch_node(const StateId& id, const std::vector<double>& features, bool goal_visible = false);

  void add_transition(const StateId& from, const StateId& to, const std::vector<double>& feat_from,
                      const std::vector<double>& feat_to, bool goal_visible_from = false,
                      bool goal_visible_to = false);

  // Labels the first state 0 and the last state by the sign of its reward.
  void finalize_episode(const Trajectory& traj);

  DenseGraph to_dense() const;

  // Evicts least-recently-touched nodes (and their edges and base-case
  // entries) until the node count fits.
  void prune(std::size_t max_nodes);

  void clear();

  std::string snapshot_json() const;

 private:
  std::size_t feature_dim_;
  std::uint64_t layout_hash_ = 0;
  std::unordered_map<StateId, int, StateIdHash> index_;
  std::vector<StateId> ids_;
  std::vector<double> features_;  // node_count x feature_dim, row-major
  std::vector<std::uint8_t> goal_visible_;
  std::vector<std::pair<int, int>> edges_;
  std::unordered_set<std::uint64_t> edge_keys_;
  std::vector<std::pair<int, int>> base_cases_;
  std::vector<std::int64_t> last_touch_;
  std::int64_t episode_counter_ = 0;
};

}  // namespace gp

#endif  // GP_GRAPH_HPP_
