#ifndef GP_GNN_HPP_
#define GP_GNN_HPP_

#include <cstdint>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "gp/graph.hpp"
#include "gp/rng.hpp"
#include "gp/tensor.hpp"

namespace gp {

enum class GnnFamily { GCN, GAT, SAGE };
enum class L0Mode { bce, literal };

GnnFamily gnn_family_from_string(const std::string& name);
std::string to_string(GnnFamily family);

// Edge-list view of a symmetrized 0/1 adjacency matrix. Directed pairs carry
// both directions of every undirected edge, sorted by (dst, src); neighbor
// lists are ascending by node index, which the LSTM aggregator uses as its
// deterministic ordering.
struct Adjacency {
  int n = 0;
  std::vector<int> src, dst;
  std::vector<double> degree;
  std::vector<std::vector<int>> neighbors;
  // attention support: the edge list plus a self edge per node
  std::vector<int> att_src, att_dst;

  static Adjacency from_dense(const Tensor& a);
};

struct AttentionEntry {
  int layer = 0;  // 1-based
  int head = 0;
  int src_node = 0;
  int dst_node = 0;
  double value = 0.0;
};

struct AttentionRecord {
  std::vector<AttentionEntry> entries;
};

// Attention joined with state identities for analysis dumps.
struct AttentionEdge {
  StateId src;
  StateId dst;
  int head = 0;
  double value = 0.0;
  bool goal_visible = false;  // of the destination state
};

enum class Act { identity, relu, leaky_relu };
Tensor apply_act(const Tensor& x, Act act);

struct GcnLayerParams {
  Tensor weight;  // in x out
  Tensor bias;    // 1 x out
};

struct GatHeadParams {
  Tensor weight;  // in x out
  Tensor attn;    // 2*out x 1
};

struct LstmParams {
  Tensor w_ih;  // in x 4*hidden, gate order i,f,g,o
  Tensor w_hh;  // hidden x 4*hidden
  Tensor b_ih;  // 1 x 4*hidden
  Tensor b_hh;  // 1 x 4*hidden
};

struct SageLayerParams {
  bool lstm_aggregator = false;
  LstmParams lstm;  // aggregator when lstm_aggregator
  Tensor weight;    // 2*in x out, applied to concat(own, aggregate)
  Tensor bias;      // 1 x out
};

// Degree-normalized neighborhood sum followed by bias and activation; an
// isolated node reduces to act(bias).
Tensor gcn_layer(const Adjacency& adj, const Tensor& h, const GcnLayerParams& p, Act act);

// Attention-weighted aggregation. The softmax support of node i is its
// neighborhood plus i itself. Head outputs are activated then concatenated.
Tensor gat_layer(const Adjacency& adj, const Tensor& h, const std::vector<GatHeadParams>& heads,
                 Act act, double act_slope, AttentionRecord* record = nullptr, int layer_index = 1);

// Aggregate (mean or LSTM over neighbors in insertion order), concat with the
// node's own features, then affine + activation. Empty neighborhoods
// aggregate to zero.
Tensor sage_layer(const Adjacency& adj, const Tensor& h, const SageLayerParams& p, Act act);

// Sum over all ordered pairs (v, w) with A_vw = 1 of (phi_w - phi_v)^2.
Tensor laplacian_smoothness(const Adjacency& adj, const Tensor& phi);

// When enabled, every gat_layer forward verifies that incoming attention sums
// to 1 per destination and head (tolerance 1e-6), throwing on violation.
void set_gat_attention_check(bool enabled);
std::uint64_t gat_attention_checks_performed();

struct PotentialConfig {
  GnnFamily family = GnnFamily::GCN;
  std::size_t feature_dim = 64;
  std::size_t hidden = 64;
  std::size_t heads = 4;  // GAT layer 1
  double eta = 10.0;
  L0Mode l0 = L0Mode::bce;
  double lr = 1e-3;
};

// Two-layer GNN with a 2-class softmax head; the class-1 probability is the
// potential phi(s) in (0,1).
class PotentialModel {
 public:
  PotentialModel(const PotentialConfig& config, Rng& rng);

  GnnFamily family() const { return config_.family; }
  const PotentialConfig& config() const { return config_; }

  // phi per node (Nx1). Records attention when a record is supplied.
  Tensor phi(const Adjacency& adj, const Tensor& x, AttentionRecord* record = nullptr) const;

  // L = L0 + eta * L_prop over the symmetrized edge set.
  Tensor loss(const Adjacency& adj, const Tensor& x,
              const std::vector<std::pair<int, int>>& base_cases) const;

  // One forward/backward/Adam update on detached features; returns the
  // pre-step loss.
  double train_step(const DenseGraph& graph);

  // Layer-2 attention joined with state ids; GAT only.
  std::vector<AttentionEdge> extract_attention(const TransitionGraph& graph) const;

  std::vector<Tensor> parameters() const;
  std::vector<std::pair<std::string, Tensor>> named_parameters() const;
  void load_state(const std::vector<std::pair<std::string, Tensor>>& state);

 private:
  Tensor hidden_layers(const Adjacency& adj, const Tensor& x, AttentionRecord* record) const;

  PotentialConfig config_;
  GcnLayerParams gcn1_, gcn2_;
  std::vector<GatHeadParams> gat1_, gat2_;
  SageLayerParams sage1_, sage2_;
  Tensor cls_weight_;  // hidden x 2
  Tensor cls_bias_;    // 1 x 2
  std::unique_ptr<Adam> opt_;
};

// Convenience wrappers over a dense adjacency matrix.
Tensor phi_forward(const PotentialModel& model, const Tensor& dense_adjacency, const Tensor& x,
                   AttentionRecord* record = nullptr);
Tensor shaping_loss(const PotentialModel& model, const Tensor& dense_adjacency, const Tensor& x,
                    const std::vector<std::pair<int, int>>& base_cases);

}  // namespace gp

#endif  // GP_GNN_HPP_
