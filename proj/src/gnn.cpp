#include "gp/gnn.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <map>
#include <stdexcept>

namespace gp {

namespace {

constexpr double kAttentionSlope = 0.2;  // LeakyReLU slope for attention scores

std::atomic<bool> g_check_attention{false};
std::atomic<std::uint64_t> g_attention_checks{0};

void verify_attention_normalization(const Tensor& alpha, const std::vector<int>& dst, std::size_t n) {
  std::vector<double> sums(n, 0.0);
  for (std::size_t e = 0; e < dst.size(); ++e) sums[dst[e]] += alpha.values()[e];
  for (std::size_t i = 0; i < n; ++i) {
    if (std::abs(sums[i] - 1.0) > 1e-6) {
      throw std::logic_error("gat attention normalization violated: destination " + std::to_string(i) +
                             " sums to " + std::to_string(sums[i]));
    }
  }
  g_attention_checks.fetch_add(1, std::memory_order_relaxed);
}

Tensor glorot(Rng& rng, std::size_t in, std::size_t out) {
  const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
  Tensor w = Tensor::zeros(in, out, true);
  for (double& v : w.values()) v = rng.uniform(-limit, limit);
  return w;
}

Tensor lstm_uniform(Rng& rng, std::size_t rows, std::size_t cols, std::size_t hidden) {
  const double limit = 1.0 / std::sqrt(static_cast<double>(hidden));
  Tensor w = Tensor::zeros(rows, cols, true);
  for (double& v : w.values()) v = rng.uniform(-limit, limit);
  return w;
}

}  // namespace

GnnFamily gnn_family_from_string(const std::string& name) {
  if (name == "gcn") return GnnFamily::GCN;
  if (name == "gat") return GnnFamily::GAT;
  if (name == "sage") return GnnFamily::SAGE;
  throw std::invalid_argument("unknown GNN family: " + name);
}

std::string to_string(GnnFamily family) {
  switch (family) {
    case GnnFamily::GCN: return "gcn";
    case GnnFamily::GAT: return "gat";
    case GnnFamily::SAGE: return "sage";
  }
  return "?";
}

Tensor apply_act(const Tensor& x, Act act) {
  switch (act) {
    case Act::identity: return x;
    case Act::relu: return relu(x);
    case Act::leaky_relu: return leaky_relu(x, 0.01);
  }
  return x;
}

Adjacency Adjacency::from_dense(const Tensor& a) {
  if (a.rows() != a.cols()) {
    throw std::invalid_argument("adjacency must be square, got " + a.shape_str());
  }
  Adjacency adj;
  adj.n = static_cast<int>(a.rows());
  adj.degree.assign(adj.n, 0.0);
  adj.neighbors.assign(adj.n, {});
  for (int i = 0; i < adj.n; ++i) {    // i = destination
    for (int j = 0; j < adj.n; ++j) {  // j = source neighbor
      if (a.at(i, j) == 0.0) continue;
      adj.src.push_back(j);
      adj.dst.push_back(i);
      adj.neighbors[i].push_back(j);
      adj.degree[i] += 1.0;
    }
  }
  adj.att_src = adj.src;
  adj.att_dst = adj.dst;
  for (int i = 0; i < adj.n; ++i) {
    if (a.at(i, i) == 0.0) {
      adj.att_src.push_back(i);
      adj.att_dst.push_back(i);
    }
  }
  return adj;
}

// ---- layers ----

Tensor gcn_layer(const Adjacency& adj, const Tensor& h, const GcnLayerParams& p, Act act) {
  const std::size_t n = adj.n;
  const Tensor messages = matmul(h, p.weight);
  Tensor aggregate;
  if (adj.src.empty()) {
    aggregate = Tensor::zeros(n, p.weight.cols());
  } else {
    std::vector<double> coeff(adj.src.size());
    for (std::size_t e = 0; e < adj.src.size(); ++e) {
      coeff[e] = 1.0 / (std::sqrt(adj.degree[adj.src[e]]) * std::sqrt(adj.degree[adj.dst[e]]));
    }
    aggregate = segment_sum(scale_rows(gather_rows(messages, adj.src), coeff), adj.dst, n);
  }
  return apply_act(add(aggregate, repeat_rows(p.bias, n)), act);
}

Tensor gat_layer(const Adjacency& adj, const Tensor& h, const std::vector<GatHeadParams>& heads,
                 Act act, double act_slope, AttentionRecord* record, int layer_index) {
  const std::size_t n = adj.n;
  Tensor out;
  for (std::size_t k = 0; k < heads.size(); ++k) {
    const GatHeadParams& head = heads[k];
    const std::size_t dh = head.weight.cols();
    const Tensor m = matmul(h, head.weight);
    const Tensor src_feat = gather_rows(m, adj.att_src);
    const Tensor dst_feat = gather_rows(m, adj.att_dst);
    // e_ij = LeakyReLU(a^T [W h_i || W h_j]), i = destination
    const Tensor scores = leaky_relu(matmul(concat_cols(dst_feat, src_feat), head.attn), kAttentionSlope);
    const Tensor alpha = segment_softmax(scores, adj.att_dst, n);
    if (g_check_attention.load(std::memory_order_relaxed)) {
      verify_attention_normalization(alpha, adj.att_dst, n);
    }
    if (record != nullptr) {
      for (std::size_t e = 0; e < adj.att_src.size(); ++e) {
        record->entries.push_back(AttentionEntry{layer_index, static_cast<int>(k), adj.att_src[e],
                                                 adj.att_dst[e], alpha.values()[e]});
      }
    }
    const Tensor weighted = mul(src_feat, repeat_cols(alpha, dh));
    Tensor head_out = segment_sum(weighted, adj.att_dst, n);
    head_out = act == Act::leaky_relu ? leaky_relu(head_out, act_slope) : apply_act(head_out, act);
    out = (k == 0) ? head_out : concat_cols(out, head_out);
  }
  return out;
}

namespace {

Tensor lstm_aggregate(const Adjacency& adj, const Tensor& h, const LstmParams& p) {
  const std::size_t n = adj.n;
  const std::size_t hidden = p.w_hh.rows();
  // process nodes grouped by neighbor count so each group runs in lockstep
  std::map<std::size_t, std::vector<int>> by_degree;
  for (int i = 0; i < adj.n; ++i) {
    if (!adj.neighbors[i].empty()) by_degree[adj.neighbors[i].size()].push_back(i);
  }
  Tensor aggregate = Tensor::zeros(n, hidden);
  const Tensor bias = add(p.b_ih, p.b_hh);
  for (const auto& [deg, nodes] : by_degree) {
    const std::size_t b = nodes.size();
    Tensor hs = Tensor::zeros(b, hidden);
    Tensor cs = Tensor::zeros(b, hidden);
    const Tensor bias_rows = repeat_rows(bias, b);
    for (std::size_t t = 0; t < deg; ++t) {
      std::vector<int> step_ids(b);
      for (std::size_t r = 0; r < b; ++r) step_ids[r] = adj.neighbors[nodes[r]][t];
      const Tensor xt = gather_rows(h, step_ids);
      const Tensor gates = add(add(matmul(xt, p.w_ih), matmul(hs, p.w_hh)), bias_rows);
      const Tensor gi = sigmoid(slice_cols(gates, 0, hidden));
      const Tensor gf = sigmoid(slice_cols(gates, hidden, hidden));
      const Tensor gg = tanh_act(slice_cols(gates, 2 * hidden, hidden));
      const Tensor go = sigmoid(slice_cols(gates, 3 * hidden, hidden));
      cs = add(mul(gf, cs), mul(gi, gg));
      hs = mul(go, tanh_act(cs));
    }
    aggregate = add(aggregate, scatter_rows(hs, nodes, n));
  }
  return aggregate;
}

}  // namespace

Tensor sage_layer(const Adjacency& adj, const Tensor& h, const SageLayerParams& p, Act act) {
  const std::size_t n = adj.n;
  Tensor aggregate;
  if (p.lstm_aggregator) {
    aggregate = lstm_aggregate(adj, h, p.lstm);
  } else {
    if (adj.src.empty()) {
      aggregate = Tensor::zeros(n, h.cols());
    } else {
      std::vector<double> inv_degree(n);
      for (std::size_t i = 0; i < n; ++i) {
        inv_degree[i] = adj.degree[i] > 0.0 ? 1.0 / adj.degree[i] : 0.0;
      }
      aggregate = scale_rows(segment_sum(gather_rows(h, adj.src), adj.dst, n), inv_degree);
    }
  }
  const Tensor cat = concat_cols(h, aggregate);
  return apply_act(add(matmul(cat, p.weight), repeat_rows(p.bias, n)), act);
}

// ---- PotentialModel ----

PotentialModel::PotentialModel(const PotentialConfig& config, Rng& rng) : config_(config) {
  const std::size_t f = config.feature_dim;
  const std::size_t hid = config.hidden;
  switch (config.family) {
    case GnnFamily::GCN:
      gcn1_ = {glorot(rng, f, hid), Tensor::zeros(1, hid, true)};
      gcn2_ = {glorot(rng, hid, hid), Tensor::zeros(1, hid, true)};
      break;
    case GnnFamily::GAT: {
      if (config.heads == 0 || hid % config.heads != 0) {
        throw std::invalid_argument("gat: hidden (" + std::to_string(hid) +
                                    ") must be divisible by heads (" + std::to_string(config.heads) + ")");
      }
      const std::size_t dh = hid / config.heads;
      for (std::size_t k = 0; k < config.heads; ++k) {
        gat1_.push_back(GatHeadParams{glorot(rng, f, dh), glorot(rng, 2 * dh, 1)});
      }
      gat2_.push_back(GatHeadParams{glorot(rng, hid, hid), glorot(rng, 2 * hid, 1)});
      break;
    }
    case GnnFamily::SAGE:
      sage1_.lstm_aggregator = false;
      sage1_.weight = glorot(rng, 2 * f, hid);
      sage1_.bias = Tensor::zeros(1, hid, true);
      sage2_.lstm_aggregator = true;
      sage2_.lstm = LstmParams{lstm_uniform(rng, hid, 4 * hid, hid), lstm_uniform(rng, hid, 4 * hid, hid),
                               Tensor::zeros(1, 4 * hid, true), Tensor::zeros(1, 4 * hid, true)};
      sage2_.weight = glorot(rng, 2 * hid, hid);
      sage2_.bias = Tensor::zeros(1, hid, true);
      break;
  }
  cls_weight_ = glorot(rng, hid, 2);
  cls_bias_ = Tensor::zeros(1, 2, true);
  opt_ = std::make_unique<Adam>(parameters(), config.lr);
}

Tensor PotentialModel::hidden_layers(const Adjacency& adj, const Tensor& x,
                                     AttentionRecord* record) const {
  switch (config_.family) {
    case GnnFamily::GCN: {
      const Tensor h1 = gcn_layer(adj, x, gcn1_, Act::relu);
      return gcn_layer(adj, h1, gcn2_, Act::relu);
    }
    case GnnFamily::GAT: {
      const Tensor h1 = gat_layer(adj, x, gat1_, Act::leaky_relu, 0.01, record, 1);
      return gat_layer(adj, h1, gat2_, Act::leaky_relu, 0.01, record, 2);
    }
    case GnnFamily::SAGE: {
      const Tensor h1 = sage_layer(adj, x, sage1_, Act::relu);
      return sage_layer(adj, h1, sage2_, Act::relu);
    }
  }
  throw std::logic_error("unreachable");
}

Tensor PotentialModel::phi(const Adjacency& adj, const Tensor& x, AttentionRecord* record) const {
  if (adj.n == 0) throw std::logic_error("phi: empty graph");
  if (x.cols() != config_.feature_dim || x.rows() != static_cast<std::size_t>(adj.n)) {
    throw std::invalid_argument("phi: feature matrix " + x.shape_str() + " does not match graph (n=" +
                                std::to_string(adj.n) + ", d=" + std::to_string(config_.feature_dim) + ")");
  }
  const Tensor h2 = hidden_layers(adj, x, record);
  const Tensor logits = add(matmul(h2, cls_weight_), repeat_rows(cls_bias_, adj.n));
  const Tensor probs = softmax_rows(logits);
  return select_per_row(probs, std::vector<int>(adj.n, 1));
}

void set_gat_attention_check(bool enabled) { g_check_attention.store(enabled); }

std::uint64_t gat_attention_checks_performed() { return g_attention_checks.load(); }

Tensor laplacian_smoothness(const Adjacency& adj, const Tensor& phi) {
  if (phi.cols() != 1 || phi.rows() != static_cast<std::size_t>(adj.n)) {
    throw std::invalid_argument("laplacian_smoothness: phi must be n x 1, got " + phi.shape_str());
  }
  if (adj.src.empty()) return Tensor::zeros(1, 1);
  const Tensor diff = sub(gather_rows(phi, adj.dst), gather_rows(phi, adj.src));
  return sum_all(mul(diff, diff));
}

Tensor PotentialModel::loss(const Adjacency& adj, const Tensor& x,
                            const std::vector<std::pair<int, int>>& base_cases) const {
  const Tensor phi_all = phi(adj, x);
  Tensor total = Tensor::zeros(1, 1);
  if (!base_cases.empty()) {
    const std::size_t m = base_cases.size();
    std::vector<int> nodes(m);
    std::vector<double> labels(m);
    for (std::size_t i = 0; i < m; ++i) {
      nodes[i] = base_cases[i].first;
      labels[i] = static_cast<double>(base_cases[i].second);
    }
    const Tensor y = Tensor::from_vector(m, 1, labels);
    const Tensor phi_s = gather_rows(phi_all, nodes);
    const Tensor log_p = log_op(clamp(phi_s, 1e-12, 1.0));
    Tensor terms = mul(y, log_p);
    if (config_.l0 == L0Mode::bce) {
      const Tensor one_minus_y = sub(Tensor::full(m, 1, 1.0), y);
      const Tensor log_1p = log_op(clamp(sub(Tensor::full(m, 1, 1.0), phi_s), 1e-12, 1.0));
      terms = add(terms, mul(one_minus_y, log_1p));
    }
    // summed over the base-case set, matching the summed smoothness term;
    // recurring labels accumulate weight, which keeps the label force
    // comparable to the edge-count-scaled smoothness force as graphs grow
    total = scale(sum_all(terms), -1.0);
  }
  if (!adj.src.empty()) {
    total = add(total, scale(laplacian_smoothness(adj, phi_all), config_.eta));
  }
  return total;
}

double PotentialModel::train_step(const DenseGraph& graph) {
  const Adjacency adj = Adjacency::from_dense(graph.adjacency);
  Tape tape;
  Tape::Scope scope(tape);
  const Tensor l = loss(adj, graph.features, graph.base_cases);
  const double value = l.item();
  if (!l.requires_grad()) return value;  // nothing trainable reached the loss
  backward(l);
  for (Tensor p : parameters()) p.grad();  // params a topology never used still step with zero grad
  opt_->step();
  return value;
}

std::vector<AttentionEdge> PotentialModel::extract_attention(const TransitionGraph& graph) const {
  if (config_.family != GnnFamily::GAT) {
    throw std::logic_error("extract_attention: model family is " + to_string(config_.family) +
                           ", attention requires gat");
  }
  const DenseGraph dense = graph.to_dense();
  const Adjacency adj = Adjacency::from_dense(dense.adjacency);
  AttentionRecord record;
  phi(adj, dense.features, &record);
  std::vector<AttentionEdge> out;
  for (const AttentionEntry& e : record.entries) {
    if (e.layer != 2) continue;
    out.push_back(AttentionEdge{graph.node_id(e.src_node), graph.node_id(e.dst_node), e.head, e.value,
                                graph.node_goal_visible(e.dst_node)});
  }
  return out;
}

std::vector<Tensor> PotentialModel::parameters() const {
  std::vector<Tensor> ps;
  for (const auto& [name, t] : named_parameters()) ps.push_back(t);
  return ps;
}

std::vector<std::pair<std::string, Tensor>> PotentialModel::named_parameters() const {
  std::vector<std::pair<std::string, Tensor>> ps;
  switch (config_.family) {
    case GnnFamily::GCN:
      ps = {{"gnn.layer1.weight", gcn1_.weight},
            {"gnn.layer1.bias", gcn1_.bias},
            {"gnn.layer2.weight", gcn2_.weight},
            {"gnn.layer2.bias", gcn2_.bias}};
      break;
    case GnnFamily::GAT:
      for (std::size_t k = 0; k < gat1_.size(); ++k) {
        ps.emplace_back("gnn.layer1.head" + std::to_string(k) + ".weight", gat1_[k].weight);
        ps.emplace_back("gnn.layer1.head" + std::to_string(k) + ".attn", gat1_[k].attn);
      }
      ps.emplace_back("gnn.layer2.weight", gat2_[0].weight);
      ps.emplace_back("gnn.layer2.attn", gat2_[0].attn);
      break;
    case GnnFamily::SAGE:
      ps = {{"gnn.layer1.weight", sage1_.weight},
            {"gnn.layer1.bias", sage1_.bias},
            {"gnn.layer2.lstm.w_ih", sage2_.lstm.w_ih},
            {"gnn.layer2.lstm.w_hh", sage2_.lstm.w_hh},
            {"gnn.layer2.lstm.b_ih", sage2_.lstm.b_ih},
            {"gnn.layer2.lstm.b_hh", sage2_.lstm.b_hh},
            {"gnn.layer2.weight", sage2_.weight},
            {"gnn.layer2.bias", sage2_.bias}};
      break;
  }
  ps.emplace_back("gnn.cls.weight", cls_weight_);
  ps.emplace_back("gnn.cls.bias", cls_bias_);
  return ps;
}

void PotentialModel::load_state(const std::vector<std::pair<std::string, Tensor>>& state) {
  std::size_t loaded = 0;
  for (auto& [name, param] : named_parameters()) {
    for (const auto& [sname, tensor] : state) {
      if (sname != name) continue;
      if (tensor.rows() != param.rows() || tensor.cols() != param.cols()) {
        throw std::invalid_argument("load_state: shape mismatch for " + name + " (" +
                                    tensor.shape_str() + " vs " + param.shape_str() + ")");
      }
      param.values() = tensor.values();
      ++loaded;
      break;
    }
  }
  if (loaded != named_parameters().size()) {
    throw std::invalid_argument("load_state: checkpoint is missing potential-model tensors");
  }
}

Tensor phi_forward(const PotentialModel& model, const Tensor& dense_adjacency, const Tensor& x,
                   AttentionRecord* record) {
  return model.phi(Adjacency::from_dense(dense_adjacency), x, record);
}

Tensor shaping_loss(const PotentialModel& model, const Tensor& dense_adjacency, const Tensor& x,
                    const std::vector<std::pair<int, int>>& base_cases) {
  return model.loss(Adjacency::from_dense(dense_adjacency), x, base_cases);
}

}  // namespace gp
