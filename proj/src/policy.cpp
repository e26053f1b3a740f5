#include "gp/policy.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <unordered_map>

namespace gp {

namespace {

constexpr std::size_t kWidth1 = 256;
constexpr std::size_t kWidth2 = 128;

}  // namespace

Tensor orthogonal_init(Rng& rng, std::size_t rows, std::size_t cols, double gain) {
  const bool transpose = rows < cols;
  const std::size_t m = transpose ? cols : rows;
  const std::size_t n = transpose ? rows : cols;
  // columns of g orthonormalized by modified Gram-Schmidt
  std::vector<std::vector<double>> q(n, std::vector<double>(m));
  for (std::size_t j = 0; j < n; ++j) {
    for (;;) {
      for (std::size_t i = 0; i < m; ++i) q[j][i] = rng.normal();
      for (std::size_t k = 0; k < j; ++k) {
        double dot = 0.0;
        for (std::size_t i = 0; i < m; ++i) dot += q[k][i] * q[j][i];
        for (std::size_t i = 0; i < m; ++i) q[j][i] -= dot * q[k][i];
      }
      double norm = 0.0;
      for (std::size_t i = 0; i < m; ++i) norm += q[j][i] * q[j][i];
      norm = std::sqrt(norm);
      if (norm > 1e-8) {
        for (std::size_t i = 0; i < m; ++i) q[j][i] /= norm;
        break;
      }
    }
  }
  Tensor w = Tensor::zeros(rows, cols, true);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      w.at(r, c) = gain * (transpose ? q[r][c] : q[c][r]);
    }
  }
  return w;
}

PolicyNet::PolicyNet(std::size_t obs_dim, Rng& rng) : obs_dim_(obs_dim) {
  const double hidden_gain = std::sqrt(2.0);
  w1_ = orthogonal_init(rng, obs_dim, kWidth1, hidden_gain);
  b1_ = Tensor::zeros(1, kWidth1, true);
  w2_ = orthogonal_init(rng, kWidth1, kWidth2, hidden_gain);
  b2_ = Tensor::zeros(1, kWidth2, true);
  w3_ = orthogonal_init(rng, kWidth2, kEmbeddingDim, hidden_gain);
  b3_ = Tensor::zeros(1, kEmbeddingDim, true);
  actor_w_ = orthogonal_init(rng, kEmbeddingDim, 3, 0.01);
  actor_b_ = Tensor::zeros(1, 3, true);
  critic_w_ = orthogonal_init(rng, kEmbeddingDim, 1, 1.0);
  critic_b_ = Tensor::zeros(1, 1, true);
}

PolicyOutput PolicyNet::forward(const Tensor& obs_batch) const {
  if (obs_batch.cols() != obs_dim_) {
    throw std::invalid_argument("policy forward: observation batch " + obs_batch.shape_str() +
                                " does not match obs_dim " + std::to_string(obs_dim_));
  }
  const std::size_t b = obs_batch.rows();
  const Tensor h1 = relu(add(matmul(obs_batch, w1_), repeat_rows(b1_, b)));
  const Tensor h2 = relu(add(matmul(h1, w2_), repeat_rows(b2_, b)));
  const Tensor emb = relu(add(matmul(h2, w3_), repeat_rows(b3_, b)));
  PolicyOutput out;
  out.embeddings = emb;
  out.logits = add(matmul(emb, actor_w_), repeat_rows(actor_b_, b));
  out.values = add(matmul(emb, critic_w_), repeat_rows(critic_b_, b));
  return out;
}

std::vector<Tensor> PolicyNet::parameters() const {
  std::vector<Tensor> ps;
  for (const auto& [name, t] : named_parameters()) ps.push_back(t);
  return ps;
}

std::vector<std::pair<std::string, Tensor>> PolicyNet::named_parameters() const {
  return {{"encoder.w1", w1_},      {"encoder.b1", b1_},      {"encoder.w2", w2_},
          {"encoder.b2", b2_},      {"encoder.w3", w3_},      {"encoder.b3", b3_},
          {"actor.weight", actor_w_}, {"actor.bias", actor_b_}, {"critic.weight", critic_w_},
          {"critic.bias", critic_b_}};
}

void PolicyNet::load_state(const std::vector<std::pair<std::string, Tensor>>& state) {
  std::unordered_map<std::string, Tensor> by_name(state.begin(), state.end());
  for (auto& [name, param] : named_parameters()) {
    auto it = by_name.find(name);
    if (it == by_name.end()) throw std::invalid_argument("load_state: missing tensor " + name);
    if (it->second.rows() != param.rows() || it->second.cols() != param.cols()) {
      throw std::invalid_argument("load_state: shape mismatch for " + name + " (" +
                                  it->second.shape_str() + " vs " + param.shape_str() + ")");
    }
    param.values() = it->second.values();
  }
}

ActionSample sample_action(const std::vector<double>& logits, Rng& rng) {
  const std::size_t n = logits.size();
  double mx = logits[0];
  for (double v : logits) mx = std::max(mx, v);
  std::vector<double> probs(n);
  double sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    probs[i] = std::exp(logits[i] - mx);
    sum += probs[i];
  }
  for (double& p : probs) p /= sum;
  ActionSample s;
  s.action = rng.categorical(probs);
  s.log_prob = (logits[s.action] - mx) - std::log(sum);
  return s;
}

int argmax_action(const std::vector<double>& logits) {
  return static_cast<int>(std::max_element(logits.begin(), logits.end()) - logits.begin());
}

}  // namespace gp
