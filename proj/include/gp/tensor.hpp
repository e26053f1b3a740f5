#ifndef GP_TENSOR_HPP_
#define GP_TENSOR_HPP_

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace gp {

class Tape;

namespace detail {
struct TensorImpl {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;
  std::vector<double> grad;  // empty until first touched
  bool requires_grad = false;
  int node = -1;  // index into the recording tape, -1 when not recorded
};
}  // namespace detail

// Dense 2-D tensor of doubles with reverse-mode autodiff. Value-semantic
// handle over shared storage; gradients live next to the values and are
// lazily allocated. Recording happens on the thread-local active Tape.
class Tensor {
 public:
  Tensor() : impl_(std::make_shared<detail::TensorImpl>()) {}

  static Tensor zeros(std::size_t rows, std::size_t cols, bool requires_grad = false);
  static Tensor full(std::size_t rows, std::size_t cols, double value, bool requires_grad = false);
  static Tensor from_vector(std::size_t rows, std::size_t cols, std::vector<double> values,
                            bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  std::size_t rows() const { return impl_->rows; }
  std::size_t cols() const { return impl_->cols; }
  std::size_t size() const { return impl_->data.size(); }
  bool empty() const { return impl_->data.empty(); }
  std::string shape_str() const;

  double& at(std::size_t r, std::size_t c) { return impl_->data[r * impl_->cols + c]; }
  double at(std::size_t r, std::size_t c) const { return impl_->data[r * impl_->cols + c]; }
  double item() const;  // value of a 1x1 tensor

  std::vector<double>& values() { return impl_->data; }
  const std::vector<double>& values() const { return impl_->data; }

  bool requires_grad() const { return impl_->requires_grad; }
  void set_requires_grad(bool v) { impl_->requires_grad = v; }

  bool has_grad() const { return !impl_->grad.empty(); }
  // Allocates (zero-filled) on first use.
  std::vector<double>& grad();
  const std::vector<double>& grad() const;
  double grad_at(std::size_t r, std::size_t c) const;
  void zero_grad();

  // Value copy that is cut off from the tape and carries no gradient.
  Tensor detach() const;

  detail::TensorImpl* impl() const { return impl_.get(); }
  std::shared_ptr<detail::TensorImpl> shared_impl() const { return impl_; }

 private:
  std::shared_ptr<detail::TensorImpl> impl_;
};

// Ordered record of differentiable operations. Nodes are appended in
// execution order, which makes the list topologically sorted; backward
// replays it in reverse. A tape and its tensors belong to one thread.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // RAII activation on the current thread. Scopes nest.
  class Scope {
   public:
    explicit Scope(Tape& tape);
    ~Scope();
    Scope(const Scope&) = delete;
    Scope& operator=(const Scope&) = delete;

   private:
    Tape* previous_;
  };

  static Tape* current();

  int record(std::function<void()> backward_fn);
  void replay_backward(int from_node) const;
  std::size_t size() const { return nodes_.size(); }
  void clear() { nodes_.clear(); }

 private:
  struct Node {
    std::function<void()> backward;
  };
  std::vector<Node> nodes_;
};

// ---- Operations ------------------------------------------------------------
// Every op computes values eagerly. When a tape is active and an input
// requires grad, a backward closure is recorded and the result requires grad.

Tensor matmul(const Tensor& a, const Tensor& b);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);      // elementwise (Hadamard)
Tensor scale(const Tensor& a, double factor);
Tensor add_scalar(const Tensor& a, double value);

Tensor relu(const Tensor& x);
Tensor leaky_relu(const Tensor& x, double slope = 0.01);
Tensor sigmoid(const Tensor& x);
Tensor tanh_act(const Tensor& x);
Tensor exp_op(const Tensor& x);
Tensor log_op(const Tensor& x);

Tensor softmax_rows(const Tensor& x);
Tensor log_softmax_rows(const Tensor& x);

// Row i of the result is the sum of value rows whose segment id is i.
Tensor segment_sum(const Tensor& values, const std::vector<int>& segment_of, std::size_t n_segments);
// Softmax over entries sharing a segment id (scores must be a column).
Tensor segment_softmax(const Tensor& scores, const std::vector<int>& segment_of, std::size_t n_segments);

Tensor gather_rows(const Tensor& x, const std::vector<int>& row_ids);
// Writes row k of `rows` into output row row_ids[k]; ids must be unique.
Tensor scatter_rows(const Tensor& rows, const std::vector<int>& row_ids, std::size_t n_rows);

Tensor concat_cols(const Tensor& a, const Tensor& b);
Tensor slice_cols(const Tensor& x, std::size_t first, std::size_t count);

Tensor repeat_rows(const Tensor& row, std::size_t times);  // 1xN -> MxN
Tensor repeat_cols(const Tensor& col, std::size_t times);  // Mx1 -> MxN

Tensor row_sum(const Tensor& x);   // MxN -> Mx1
Tensor sum_all(const Tensor& x);   // MxN -> 1x1
Tensor mean_all(const Tensor& x);  // MxN -> 1x1

// Picks x(r, col_of[r]) for each row r -> Mx1.
Tensor select_per_row(const Tensor& x, const std::vector<int>& col_of);

Tensor minimum(const Tensor& a, const Tensor& b);
Tensor clamp(const Tensor& x, double lo, double hi);

// Multiplies row r by the constant coeffs[r].
Tensor scale_rows(const Tensor& x, const std::vector<double>& coeffs);

// Accumulates gradients for every requires-grad ancestor of a scalar loss.
// Repeated calls without zeroing accumulate additively.
void backward(const Tensor& loss);

// ---- Optimizer -------------------------------------------------------------

class Adam {
 public:
  explicit Adam(std::vector<Tensor> params, double lr = 3e-4, double beta1 = 0.9,
                double beta2 = 0.999, double eps = 1e-8);

  // One update from the accumulated gradients; gradients are zeroed after.
  void step();
  void set_lr(double lr) { lr_ = lr; }
  double lr() const { return lr_; }
  const std::vector<Tensor>& params() const { return params_; }

 private:
  std::vector<Tensor> params_;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
  double lr_, beta1_, beta2_, eps_;
  long t_ = 0;
};

// Caps the worker threads used by large matmuls. 0 restores the GP_THREADS /
// hardware default. Output is bitwise identical for any thread count.
void set_matmul_threads(int n);
int matmul_threads();

}  // namespace gp

#endif  // GP_TENSOR_HPP_
