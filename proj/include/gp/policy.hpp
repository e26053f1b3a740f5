#ifndef GP_POLICY_HPP_
#define GP_POLICY_HPP_

#include <string>
#include <utility>
#include <vector>

#include "gp/rng.hpp"
#include "gp/tensor.hpp"

namespace gp {

inline constexpr std::size_t kEmbeddingDim = 64;  // matches the GNN hidden width

struct PolicyOutput {
  Tensor logits;      // B x 3
  Tensor values;      // B x 1
  Tensor embeddings;  // B x 64, the last encoder layer's activations
};

struct ActionSample {
  int action = 0;
  double log_prob = 0.0;
};

// Actor-critic with a shared three-block affine+ReLU encoder (widths 256,
// 128, 64). The 64-wide embedding doubles as the GNN node feature.
class PolicyNet {
 public:
  PolicyNet(std::size_t obs_dim, Rng& rng);

  std::size_t obs_dim() const { return obs_dim_; }

  PolicyOutput forward(const Tensor& obs_batch) const;

  std::vector<Tensor> parameters() const;
  std::vector<std::pair<std::string, Tensor>> named_parameters() const;
  void load_state(const std::vector<std::pair<std::string, Tensor>>& state);

 private:
  std::size_t obs_dim_;
  Tensor w1_, b1_, w2_, b2_, w3_, b3_;
  Tensor actor_w_, actor_b_;
  Tensor critic_w_, critic_b_;
};

ActionSample sample_action(const std::vector<double>& logits, Rng& rng);
int argmax_action(const std::vector<double>& logits);

// Orthogonal rows/columns scaled by gain (random normal basis, Gram-Schmidt).
Tensor orthogonal_init(Rng& rng, std::size_t rows, std::size_t cols, double gain);

}  // namespace gp

#endif  // GP_POLICY_HPP_
