#include "gp/graph.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>

#include "json.hpp"

namespace gp {

namespace {

std::uint64_t edge_key(int src, int dst) {
  return (static_cast<std::uint64_t>(static_cast<std::uint32_t>(src)) << 32) |
         static_cast<std::uint32_t>(dst);
}

}  // namespace

int TransitionGraph::find_node(const StateId& id) const {
  auto it = index_.find(id);
  return it == index_.end() ? -1 : it->second;
}

int TransitionGraph::touch_node(const StateId& id, const std::vector<double>& features,
                                bool goal_visible) {
  if (features.size() != feature_dim_) {
    throw std::invalid_argument("touch_node: feature vector has " + std::to_string(features.size()) +
                                " entries, expected " + std::to_string(feature_dim_));
  }
  if (!ids_.empty() && id.layout_hash != layout_hash_) clear();
  layout_hash_ = id.layout_hash;
  auto [it, inserted] = index_.try_emplace(id, static_cast<int>(ids_.size()));
  const int node = it->second;
  if (inserted) {
    ids_.push_back(id);
    features_.resize(features_.size() + feature_dim_);
    goal_visible_.push_back(0);
    last_touch_.push_back(episode_counter_);
  }
  std::copy(features.begin(), features.end(), features_.begin() + node * feature_dim_);
  goal_visible_[node] = goal_visible ? 1 : 0;
  last_touch_[node] = episode_counter_;
  return node;
}

void TransitionGraph::add_transition(const StateId& from, const StateId& to,
                                     const std::vector<double>& feat_from,
                                     const std::vector<double>& feat_to, bool goal_visible_from,
                                     bool goal_visible_to) {
  const int a = touch_node(from, feat_from, goal_visible_from);
  const int b = touch_node(to, feat_to, goal_visible_to);
  if (edge_keys_.insert(edge_key(a, b)).second) edges_.emplace_back(a, b);
}

void TransitionGraph::finalize_episode(const Trajectory& traj) {
  if (traj.states.empty()) throw std::logic_error("finalize_episode: empty trajectory");
  auto flag = [&](std::size_t i) { return traj.goal_visible.empty() ? false : bool(traj.goal_visible[i]); };
  const int first = touch_node(traj.states.front(), traj.embeddings.front(), flag(0));
  const int last_label = (!traj.rewards.empty() && traj.rewards.back() > 0.0) ? 1 : 0;
  if (traj.states.size() == 1) {
    base_cases_.emplace_back(first, last_label);
  } else {
    const int last = touch_node(traj.states.back(), traj.embeddings.back(), flag(traj.states.size() - 1));
    base_cases_.emplace_back(first, 0);
    base_cases_.emplace_back(last, last_label);
  }
  for (const StateId& s : traj.states) {
    const int n = find_node(s);
    if (n >= 0) last_touch_[n] = episode_counter_;
  }
  ++episode_counter_;
}

DenseGraph TransitionGraph::to_dense() const {
  if (ids_.empty()) throw std::logic_error("to_dense: graph is empty");
  const std::size_t n = ids_.size();
  DenseGraph dense;
  dense.adjacency = Tensor::zeros(n, n);
  for (const auto& [src, dst] : edges_) {
    dense.adjacency.at(src, dst) = 1.0;
    dense.adjacency.at(dst, src) = 1.0;
  }
  dense.features = Tensor::from_vector(n, feature_dim_, features_);
  dense.base_cases = base_cases_;
  return dense;
}

void TransitionGraph::prune(std::size_t max_nodes) {
  if (max_nodes < 2) throw std::invalid_argument("prune: max_nodes must be >= 2");
  if (ids_.size() <= max_nodes) return;
  std::vector<int> order(ids_.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return last_touch_[a] > last_touch_[b];  // newest first
  });
  std::vector<int> remap(ids_.size(), -1);
  for (std::size_t k = 0; k < max_nodes; ++k) remap[order[k]] = static_cast<int>(k);

  std::vector<StateId> ids(max_nodes);
  std::vector<double> features(max_nodes * feature_dim_);
  std::vector<std::uint8_t> goal_visible(max_nodes);
  std::vector<std::int64_t> last_touch(max_nodes);
  for (std::size_t old = 0; old < remap.size(); ++old) {
    const int nw = remap[old];
    if (nw < 0) continue;
    ids[nw] = ids_[old];
    std::copy(features_.begin() + old * feature_dim_, features_.begin() + (old + 1) * feature_dim_,
              features.begin() + nw * feature_dim_);
    goal_visible[nw] = goal_visible_[old];
    last_touch[nw] = last_touch_[old];
  }
  std::vector<std::pair<int, int>> edges;
  std::unordered_set<std::uint64_t> edge_keys;
  for (const auto& [src, dst] : edges_) {
    if (remap[src] < 0 || remap[dst] < 0) continue;
    const int a = remap[src], b = remap[dst];
    if (edge_keys.insert(edge_key(a, b)).second) edges.emplace_back(a, b);
  }
  std::vector<std::pair<int, int>> base;
  for (const auto& [node, label] : base_cases_) {
    if (remap[node] >= 0) base.emplace_back(remap[node], label);
  }
  index_.clear();
  for (std::size_t k = 0; k < ids.size(); ++k) index_.emplace(ids[k], static_cast<int>(k));
  ids_ = std::move(ids);
  features_ = std::move(features);
  goal_visible_ = std::move(goal_visible);
  last_touch_ = std::move(last_touch);
  edges_ = std::move(edges);
  edge_keys_ = std::move(edge_keys);
  base_cases_ = std::move(base);
}

void TransitionGraph::clear() {
  index_.clear();
  ids_.clear();
  features_.clear();
  goal_visible_.clear();
  edges_.clear();
  edge_keys_.clear();
  base_cases_.clear();
  last_touch_.clear();
}

std::string TransitionGraph::snapshot_json() const {
  nlohmann::json j;
  j["layout_hash"] = layout_hash_;
  j["nodes"] = nlohmann::json::array();
  for (std::size_t k = 0; k < ids_.size(); ++k) {
    const StateId& s = ids_[k];
    j["nodes"].push_back({{"x", s.x},
                          {"y", s.y},
                          {"dir", s.dir},
                          {"uid", s.uid},
                          {"goal_visible", goal_visible_[k] != 0}});
  }
  j["edges"] = nlohmann::json::array();
  for (const auto& [src, dst] : edges_) j["edges"].push_back({src, dst});
  j["base_cases"] = nlohmann::json::array();
  for (const auto& [node, label] : base_cases_) j["base_cases"].push_back({node, label});
  j["features"] = nlohmann::json::array();
  for (std::size_t k = 0; k < ids_.size(); ++k) {
    nlohmann::json row = nlohmann::json::array();
    for (std::size_t d = 0; d < feature_dim_; ++d) row.push_back(features_[k * feature_dim_ + d]);
    j["features"].push_back(std::move(row));
  }
  return j.dump();
}

}  // namespace gp
