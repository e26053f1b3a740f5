#include "gp/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <limits>
#include <stdexcept>
#include <thread>

namespace gp {

namespace {

thread_local Tape* g_active_tape = nullptr;

std::atomic<int> g_thread_override{0};

int default_threads() {
  static int cached = [] {
    if (const char* env = std::getenv("GP_THREADS")) {
      int n = std::atoi(env);
      if (n >= 1) return std::min(n, 64);
    }
    unsigned hw = std::thread::hardware_concurrency();
    return static_cast<int>(std::min<unsigned>(hw == 0 ? 1 : hw, 8));
  }();
  return cached;
}

[[noreturn]] void shape_error(const std::string& op, const Tensor& a, const Tensor& b) {
  throw std::invalid_argument(op + ": shape mismatch (" + a.shape_str() + " vs " + b.shape_str() + ")");
}

void check_same_shape(const std::string& op, const Tensor& a, const Tensor& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) shape_error(op, a, b);
}

bool grad_wanted(const Tensor& a) { return Tape::current() != nullptr && a.requires_grad(); }
bool grad_wanted(const Tensor& a, const Tensor& b) {
  return Tape::current() != nullptr && (a.requires_grad() || b.requires_grad());
}

void attach(Tensor& out, std::function<void()> backward_fn) {
  out.set_requires_grad(true);
  out.impl()->node = Tape::current()->record(std::move(backward_fn));
}

// Consumes the output gradient of a recorded op: accumulation from all
// consumers has already happened by the time the op's node replays, so the
// buffer is handed downstream exactly once and released. Leaves keep theirs.
std::vector<double> take_grad(const Tensor& t) {
  std::vector<double> g = std::move(t.impl()->grad);
  t.impl()->grad.clear();
  return g;
}

// ---- raw kernels (row-major) ----

void mm_accumulate(const double* a, const double* b, double* c, std::size_t k, std::size_t n,
                   std::size_t i0, std::size_t i1) {
  for (std::size_t i = i0; i < i1; ++i) {
    const double* arow = a + i * k;
    double* crow = c + i * n;
    for (std::size_t kk = 0; kk < k; ++kk) {
      const double av = arow[kk];
      if (av == 0.0) continue;
      const double* brow = b + kk * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

void parallel_rows(std::size_t m, std::size_t work, const std::function<void(std::size_t, std::size_t)>& body) {
  int threads = matmul_threads();
  if (threads <= 1 || m < 2 || work < (1u << 20)) {
    body(0, m);
    return;
  }
  threads = static_cast<int>(std::min<std::size_t>(threads, m));
  std::vector<std::thread> pool;
  pool.reserve(threads - 1);
  std::size_t chunk = (m + threads - 1) / threads;
  for (int t = 1; t < threads; ++t) {
    std::size_t lo = t * chunk;
    std::size_t hi = std::min(m, lo + chunk);
    if (lo >= hi) break;
    pool.emplace_back(body, lo, hi);
  }
  body(0, std::min(m, chunk));
  for (auto& th : pool) th.join();
}

}  // namespace

// ---- Tensor ----

Tensor Tensor::zeros(std::size_t rows, std::size_t cols, bool requires_grad) {
  Tensor t;
  t.impl_->rows = rows;
  t.impl_->cols = cols;
  t.impl_->data.assign(rows * cols, 0.0);
  t.impl_->requires_grad = requires_grad;
  return t;
}

Tensor Tensor::full(std::size_t rows, std::size_t cols, double value, bool requires_grad) {
  Tensor t = zeros(rows, cols, requires_grad);
  std::fill(t.impl_->data.begin(), t.impl_->data.end(), value);
  return t;
}

Tensor Tensor::from_vector(std::size_t rows, std::size_t cols, std::vector<double> values,
                           bool requires_grad) {
  if (values.size() != rows * cols) {
    throw std::invalid_argument("from_vector: got " + std::to_string(values.size()) +
                                " values for a " + std::to_string(rows) + "x" + std::to_string(cols) +
                                " tensor");
  }
  Tensor t;
  t.impl_->rows = rows;
  t.impl_->cols = cols;
  t.impl_->data = std::move(values);
  t.impl_->requires_grad = requires_grad;
  return t;
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return from_vector(1, 1, {value}, requires_grad);
}

std::string Tensor::shape_str() const {
  return std::to_string(rows()) + "x" + std::to_string(cols());
}

double Tensor::item() const {
  if (size() != 1) throw std::invalid_argument("item: tensor is " + shape_str() + ", expected 1x1");
  return impl_->data[0];
}

std::vector<double>& Tensor::grad() {
  if (impl_->grad.empty()) impl_->grad.assign(impl_->data.size(), 0.0);
  return impl_->grad;
}

const std::vector<double>& Tensor::grad() const {
  if (impl_->grad.empty()) throw std::logic_error("grad: not populated; call backward first");
  return impl_->grad;
}

double Tensor::grad_at(std::size_t r, std::size_t c) const { return grad()[r * cols() + c]; }

void Tensor::zero_grad() {
  if (!impl_->grad.empty()) std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0);
}

Tensor Tensor::detach() const {
  Tensor t;
  t.impl_->rows = rows();
  t.impl_->cols = cols();
  t.impl_->data = impl_->data;
  return t;
}

// ---- Tape ----

Tape::Scope::Scope(Tape& tape) : previous_(g_active_tape) { g_active_tape = &tape; }
Tape::Scope::~Scope() { g_active_tape = previous_; }

Tape* Tape::current() { return g_active_tape; }

int Tape::record(std::function<void()> backward_fn) {
  nodes_.push_back(Node{std::move(backward_fn)});
  return static_cast<int>(nodes_.size()) - 1;
}

void Tape::replay_backward(int from_node) const {
  for (int i = from_node; i >= 0; --i) nodes_[i].backward();
}

void backward(const Tensor& loss) {
  if (loss.rows() != 1 || loss.cols() != 1) {
    throw std::invalid_argument("backward: loss must be 1x1, got " + loss.shape_str());
  }
  Tensor seed = loss;  // non-const handle to the same storage
  seed.grad()[0] += 1.0;
  if (loss.impl()->node < 0) {
    if (!loss.requires_grad()) {
      throw std::logic_error("backward: loss was not produced by recorded operations");
    }
    return;  // a bare parameter used as loss: seeding its grad is the whole job
  }
  Tape* tape = Tape::current();
  if (tape == nullptr) throw std::logic_error("backward: no active tape");
  tape->replay_backward(loss.impl()->node);
}

// ---- matmul ----

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.rows()) {
    throw std::invalid_argument("matmul: inner dimensions mismatch (" + a.shape_str() + " vs " +
                                b.shape_str() + ")");
  }
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  Tensor out = Tensor::zeros(m, n);
  {
    const double* pa = a.values().data();
    const double* pb = b.values().data();
    double* pc = out.values().data();
    parallel_rows(m, m * k * n, [&](std::size_t i0, std::size_t i1) {
      mm_accumulate(pa, pb, pc, k, n, i0, i1);
    });
  }
  if (grad_wanted(a, b)) {
    Tensor at = a, bt = b, ot = out;
    attach(out, [at, bt, ot, m, k, n]() mutable {
      std::vector<double> g = take_grad(ot);
      if (g.empty()) return;
      const double* pg = g.data();
      if (at.requires_grad()) {
        // dA[i,kk] += sum_j g[i,j] * B[kk,j]
        double* ga = at.grad().data();
        const double* pb = bt.values().data();
        parallel_rows(m, m * k * n, [&](std::size_t i0, std::size_t i1) {
          for (std::size_t i = i0; i < i1; ++i) {
            const double* grow = pg + i * n;
            double* garow = ga + i * k;
            for (std::size_t kk = 0; kk < k; ++kk) {
              const double* brow = pb + kk * n;
              double acc = 0.0;
              for (std::size_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
              garow[kk] += acc;
            }
          }
        });
      }
      if (bt.requires_grad()) {
        // dB[kk,j] += sum_i A[i,kk] * g[i,j]  (partitioned over kk, race-free)
        double* gb = bt.grad().data();
        const double* pa = at.values().data();
        parallel_rows(k, m * k * n, [&](std::size_t kk0, std::size_t kk1) {
          for (std::size_t i = 0; i < m; ++i) {
            const double* grow = pg + i * n;
            const double* arow = pa + i * k;
            for (std::size_t kk = kk0; kk < kk1; ++kk) {
              const double av = arow[kk];
              if (av == 0.0) continue;
              double* gbrow = gb + kk * n;
              for (std::size_t j = 0; j < n; ++j) gbrow[j] += av * grow[j];
            }
          }
        });
      }
    });
  }
  return out;
}

// ---- elementwise ----

namespace {

template <typename Fwd, typename Bwd>
Tensor binary_elementwise(const std::string& name, const Tensor& a, const Tensor& b, Fwd fwd, Bwd bwd) {
  check_same_shape(name, a, b);
  Tensor out = Tensor::zeros(a.rows(), a.cols());
  const std::size_t sz = out.size();
  for (std::size_t i = 0; i < sz; ++i) out.values()[i] = fwd(a.values()[i], b.values()[i]);
  if (grad_wanted(a, b)) {
    Tensor at = a, bt = b, ot = out;
    attach(out, [at, bt, ot, bwd, sz]() mutable {
      std::vector<double> g = take_grad(ot);
      if (g.empty()) return;
      double* ga = at.requires_grad() ? at.grad().data() : nullptr;
      double* gb = bt.requires_grad() ? bt.grad().data() : nullptr;
      for (std::size_t i = 0; i < sz; ++i) {
        bwd(i, g[i], at.values()[i], bt.values()[i], ga, gb);
      }
    });
  }
  return out;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return binary_elementwise(
      "add", a, b, [](double x, double y) { return x + y; },
      [](std::size_t i, double g, double, double, double* ga, double* gb) {
        if (ga) ga[i] += g;
        if (gb) gb[i] += g;
      });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary_elementwise(
      "sub", a, b, [](double x, double y) { return x - y; },
      [](std::size_t i, double g, double, double, double* ga, double* gb) {
        if (ga) ga[i] += g;
        if (gb) gb[i] -= g;
      });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary_elementwise(
      "mul", a, b, [](double x, double y) { return x * y; },
      [](std::size_t i, double g, double x, double y, double* ga, double* gb) {
        if (ga) ga[i] += g * y;
        if (gb) gb[i] += g * x;
      });
}

Tensor minimum(const Tensor& a, const Tensor& b) {
  return binary_elementwise(
      "minimum", a, b, [](double x, double y) { return x <= y ? x : y; },
      [](std::size_t i, double g, double x, double y, double* ga, double* gb) {
        if (x <= y) {
          if (ga) ga[i] += g;
        } else {
          if (gb) gb[i] += g;
        }
      });
}

namespace {

template <typename Fwd, typename Bwd>
Tensor unary_elementwise(const Tensor& x, Fwd fwd, Bwd bwd) {
  Tensor out = Tensor::zeros(x.rows(), x.cols());
  const std::size_t sz = out.size();
  for (std::size_t i = 0; i < sz; ++i) out.values()[i] = fwd(x.values()[i]);
  if (grad_wanted(x)) {
    Tensor xt = x, ot = out;
    attach(out, [xt, ot, bwd, sz]() mutable {
      std::vector<double> g = take_grad(ot);
      if (g.empty()) return;
      double* gx = xt.grad().data();
      for (std::size_t i = 0; i < sz; ++i) gx[i] += g[i] * bwd(xt.values()[i], ot.values()[i]);
    });
  }
  return out;
}

}  // namespace

Tensor scale(const Tensor& a, double factor) {
  return unary_elementwise(
      a, [factor](double x) { return x * factor; }, [factor](double, double) { return factor; });
}

Tensor add_scalar(const Tensor& a, double value) {
  return unary_elementwise(
      a, [value](double x) { return x + value; }, [](double, double) { return 1.0; });
}

Tensor relu(const Tensor& x) {
  return unary_elementwise(
      x, [](double v) { return v > 0.0 ? v : 0.0; },
      [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor leaky_relu(const Tensor& x, double slope) {
  if (!(slope > 0.0 && slope < 1.0)) {
    throw std::invalid_argument("leaky_relu: slope must lie in (0,1), got " + std::to_string(slope));
  }
  return unary_elementwise(
      x, [slope](double v) { return v >= 0.0 ? v : slope * v; },
      // derivative at exactly 0 takes the positive branch
      [slope](double v, double) { return v >= 0.0 ? 1.0 : slope; });
}

Tensor sigmoid(const Tensor& x) {
  return unary_elementwise(
      x,
      [](double v) {
        if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
        double e = std::exp(v);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor tanh_act(const Tensor& x) {
  return unary_elementwise(
      x, [](double v) { return std::tanh(v); }, [](double, double y) { return 1.0 - y * y; });
}

Tensor exp_op(const Tensor& x) {
  return unary_elementwise(
      x, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

Tensor log_op(const Tensor& x) {
  return unary_elementwise(
      x, [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

Tensor clamp(const Tensor& x, double lo, double hi) {
  if (!(lo <= hi)) throw std::invalid_argument("clamp: lo > hi");
  return unary_elementwise(
      x, [lo, hi](double v) { return v < lo ? lo : (v > hi ? hi : v); },
      [lo, hi](double v, double) { return (v >= lo && v <= hi) ? 1.0 : 0.0; });
}

// ---- softmax ----

Tensor softmax_rows(const Tensor& x) {
  const std::size_t m = x.rows(), n = x.cols();
  Tensor out = Tensor::zeros(m, n);
  for (std::size_t i = 0; i < m; ++i) {
    const double* row = x.values().data() + i * n;
    double* orow = out.values().data() + i * n;
    double mx = row[0];
    for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, row[j]);
    double sum = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      orow[j] = std::exp(row[j] - mx);
      sum += orow[j];
    }
    for (std::size_t j = 0; j < n; ++j) orow[j] /= sum;
  }
  if (grad_wanted(x)) {
    Tensor xt = x, ot = out;
    attach(out, [xt, ot, m, n]() mutable {
      std::vector<double> g = take_grad(ot);
      if (g.empty()) return;
      double* gx = xt.grad().data();
      for (std::size_t i = 0; i < m; ++i) {
        const double* y = ot.values().data() + i * n;
        const double* grow = g.data() + i * n;
        double dot = 0.0;
        for (std::size_t j = 0; j < n; ++j) dot += grow[j] * y[j];
        for (std::size_t j = 0; j < n; ++j) gx[i * n + j] += y[j] * (grow[j] - dot);
      }
    });
  }
  return out;
}

Tensor log_softmax_rows(const Tensor& x) {
  const std::size_t m = x.rows(), n = x.cols();
  Tensor out = Tensor::zeros(m, n);
  for (std::size_t i = 0; i < m; ++i) {
    const double* row = x.values().data() + i * n;
    double* orow = out.values().data() + i * n;
    double mx = row[0];
    for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, row[j]);
    double sum = 0.0;
    for (std::size_t j = 0; j < n; ++j) sum += std::exp(row[j] - mx);
    const double lse = mx + std::log(sum);
    for (std::size_t j = 0; j < n; ++j) orow[j] = row[j] - lse;
  }
  if (grad_wanted(x)) {
    Tensor xt = x, ot = out;
    attach(out, [xt, ot, m, n]() mutable {
      std::vector<double> g = take_grad(ot);
      if (g.empty()) return;
      double* gx = xt.grad().data();
      for (std::size_t i = 0; i < m; ++i) {
        const double* lp = ot.values().data() + i * n;
        const double* grow = g.data() + i * n;
        double gsum = 0.0;
        for (std::size_t j = 0; j < n; ++j) gsum += grow[j];
        for (std::size_t j = 0; j < n; ++j) gx[i * n + j] += grow[j] - std::exp(lp[j]) * gsum;
      }
    });
  }
  return out;
}

// ---- segment / gather / scatter ----

namespace {

void check_segments(const std::string& op, const std::vector<int>& segment_of, std::size_t count,
                    std::size_t n_segments) {
  if (segment_of.size() != count) {
    throw std::invalid_argument(op + ": segment map has " + std::to_string(segment_of.size()) +
                                " entries for " + std::to_string(count) + " rows");
  }
  for (int s : segment_of) {
    if (s < 0 || static_cast<std::size_t>(s) >= n_segments) {
      throw std::out_of_range(op + ": segment index " + std::to_string(s) + " out of range [0, " +
                              std::to_string(n_segments) + ")");
    }
  }
}

}  // namespace

Tensor segment_sum(const Tensor& values, const std::vector<int>& segment_of, std::size_t n_segments) {
  check_segments("segment_sum", segment_of, values.rows(), n_segments);
  const std::size_t e = values.rows(), d = values.cols();
  Tensor out = Tensor::zeros(n_segments, d);
  for (std::size_t r = 0; r < e; ++r) {
    const double* src = values.values().data() + r * d;
    double* dst = out.values().data() + static_cast<std::size_t>(segment_of[r]) * d;
    for (std::size_t j = 0; j < d; ++j) dst[j] += src[j];
  }
  if (grad_wanted(values)) {
    Tensor vt = values, ot = out;
    attach(out, [vt, ot, segment_of, e, d]() mutable {
      std::vector<double> g = take_grad(ot);
      if (g.empty()) return;
      double* gv = vt.grad().data();
      for (std::size_t r = 0; r < e; ++r) {
        const double* grow = g.data() + static_cast<std::size_t>(segment_of[r]) * d;
        for (std::size_t j = 0; j < d; ++j) gv[r * d + j] += grow[j];
      }
    });
  }
  return out;
}

Tensor segment_softmax(const Tensor& scores, const std::vector<int>& segment_of, std::size_t n_segments) {
  if (scores.cols() != 1) {
    throw std::invalid_argument("segment_softmax: scores must be a column, got " + scores.shape_str());
  }
  check_segments("segment_softmax", segment_of, scores.rows(), n_segments);
  const std::size_t e = scores.rows();
  Tensor out = Tensor::zeros(e, 1);
  std::vector<double> seg_max(n_segments, -std::numeric_limits<double>::infinity());
  for (std::size_t r = 0; r < e; ++r) {
    seg_max[segment_of[r]] = std::max(seg_max[segment_of[r]], scores.values()[r]);
  }
  std::vector<double> seg_sum(n_segments, 0.0);
  for (std::size_t r = 0; r < e; ++r) {
    out.values()[r] = std::exp(scores.values()[r] - seg_max[segment_of[r]]);
    seg_sum[segment_of[r]] += out.values()[r];
  }
  for (std::size_t r = 0; r < e; ++r) out.values()[r] /= seg_sum[segment_of[r]];
  if (grad_wanted(scores)) {
    Tensor st = scores, ot = out;
    attach(out, [st, ot, segment_of, e, n_segments]() mutable {
      std::vector<double> g = take_grad(ot);
      if (g.empty()) return;
      std::vector<double> seg_dot(n_segments, 0.0);
      for (std::size_t r = 0; r < e; ++r) seg_dot[segment_of[r]] += g[r] * ot.values()[r];
      double* gs = st.grad().data();
      for (std::size_t r = 0; r < e; ++r) {
        gs[r] += ot.values()[r] * (g[r] - seg_dot[segment_of[r]]);
      }
    });
  }
  return out;
}

Tensor gather_rows(const Tensor& x, const std::vector<int>& row_ids) {
  const std::size_t d = x.cols();
  for (int r : row_ids) {
    if (r < 0 || static_cast<std::size_t>(r) >= x.rows()) {
      throw std::out_of_range("gather_rows: row " + std::to_string(r) + " out of range [0, " +
                              std::to_string(x.rows()) + ")");
    }
  }
  Tensor out = Tensor::zeros(row_ids.size(), d);
  for (std::size_t k = 0; k < row_ids.size(); ++k) {
    const double* src = x.values().data() + static_cast<std::size_t>(row_ids[k]) * d;
    std::copy(src, src + d, out.values().data() + k * d);
  }
  if (grad_wanted(x)) {
    Tensor xt = x, ot = out;
    attach(out, [xt, ot, row_ids, d]() mutable {
      std::vector<double> g = take_grad(ot);
      if (g.empty()) return;
      double* gx = xt.grad().data();
      for (std::size_t k = 0; k < row_ids.size(); ++k) {
        double* dst = gx + static_cast<std::size_t>(row_ids[k]) * d;
        const double* src = g.data() + k * d;
        for (std::size_t j = 0; j < d; ++j) dst[j] += src[j];
      }
    });
  }
  return out;
}

Tensor scatter_rows(const Tensor& rows, const std::vector<int>& row_ids, std::size_t n_rows) {
  if (row_ids.size() != rows.rows()) {
    throw std::invalid_argument("scatter_rows: id count " + std::to_string(row_ids.size()) +
                                " != row count " + std::to_string(rows.rows()));
  }
  const std::size_t d = rows.cols();
  std::vector<char> seen(n_rows, 0);
  for (int r : row_ids) {
    if (r < 0 || static_cast<std::size_t>(r) >= n_rows) {
      throw std::out_of_range("scatter_rows: row " + std::to_string(r) + " out of range [0, " +
                              std::to_string(n_rows) + ")");
    }
    if (seen[r]) throw std::invalid_argument("scatter_rows: duplicate target row " + std::to_string(r));
    seen[r] = 1;
  }
  Tensor out = Tensor::zeros(n_rows, d);
  for (std::size_t k = 0; k < row_ids.size(); ++k) {
    const double* src = rows.values().data() + k * d;
    std::copy(src, src + d, out.values().data() + static_cast<std::size_t>(row_ids[k]) * d);
  }
  if (grad_wanted(rows)) {
    Tensor rt = rows, ot = out;
    attach(out, [rt, ot, row_ids, d]() mutable {
      std::vector<double> g = take_grad(ot);
      if (g.empty()) return;
      double* gr = rt.grad().data();
      for (std::size_t k = 0; k < row_ids.size(); ++k) {
        const double* src = g.data() + static_cast<std::size_t>(row_ids[k]) * d;
        for (std::size_t j = 0; j < d; ++j) gr[k * d + j] += src[j];
      }
    });
  }
  return out;
}

// ---- shape ops ----

Tensor concat_cols(const Tensor& a, const Tensor& b) {
  if (a.rows() != b.rows()) shape_error("concat_cols", a, b);
  const std::size_t m = a.rows(), p = a.cols(), q = b.cols();
  Tensor out = Tensor::zeros(m, p + q);
  for (std::size_t i = 0; i < m; ++i) {
    std::copy(a.values().data() + i * p, a.values().data() + (i + 1) * p,
              out.values().data() + i * (p + q));
    std::copy(b.values().data() + i * q, b.values().data() + (i + 1) * q,
              out.values().data() + i * (p + q) + p);
  }
  if (grad_wanted(a, b)) {
    Tensor at = a, bt = b, ot = out;
    attach(out, [at, bt, ot, m, p, q]() mutable {
      std::vector<double> g = take_grad(ot);
      if (g.empty()) return;
      if (at.requires_grad()) {
        double* ga = at.grad().data();
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < p; ++j) ga[i * p + j] += g[i * (p + q) + j];
      }
      if (bt.requires_grad()) {
        double* gb = bt.grad().data();
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < q; ++j) gb[i * q + j] += g[i * (p + q) + p + j];
      }
    });
  }
  return out;
}

Tensor slice_cols(const Tensor& x, std::size_t first, std::size_t count) {
  if (first + count > x.cols()) {
    throw std::out_of_range("slice_cols: [" + std::to_string(first) + ", " +
                            std::to_string(first + count) + ") exceeds " + x.shape_str());
  }
  const std::size_t m = x.rows(), n = x.cols();
  Tensor out = Tensor::zeros(m, count);
  for (std::size_t i = 0; i < m; ++i) {
    std::copy(x.values().data() + i * n + first, x.values().data() + i * n + first + count,
              out.values().data() + i * count);
  }
  if (grad_wanted(x)) {
    Tensor xt = x, ot = out;
    attach(out, [xt, ot, first, count, m, n]() mutable {
      std::vector<double> g = take_grad(ot);
      if (g.empty()) return;
      double* gx = xt.grad().data();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < count; ++j) gx[i * n + first + j] += g[i * count + j];
    });
  }
  return out;
}

Tensor repeat_rows(const Tensor& row, std::size_t times) {
  if (row.rows() != 1) throw std::invalid_argument("repeat_rows: expected 1xN, got " + row.shape_str());
  const std::size_t n = row.cols();
  Tensor out = Tensor::zeros(times, n);
  for (std::size_t i = 0; i < times; ++i) {
    std::copy(row.values().begin(), row.values().end(), out.values().data() + i * n);
  }
  if (grad_wanted(row)) {
    Tensor rt = row, ot = out;
    attach(out, [rt, ot, times, n]() mutable {
      std::vector<double> g = take_grad(ot);
      if (g.empty()) return;
      double* gr = rt.grad().data();
      for (std::size_t i = 0; i < times; ++i)
        for (std::size_t j = 0; j < n; ++j) gr[j] += g[i * n + j];
    });
  }
  return out;
}

Tensor repeat_cols(const Tensor& col, std::size_t times) {
  if (col.cols() != 1) throw std::invalid_argument("repeat_cols: expected Mx1, got " + col.shape_str());
  const std::size_t m = col.rows();
  Tensor out = Tensor::zeros(m, times);
  for (std::size_t i = 0; i < m; ++i) {
    std::fill(out.values().data() + i * times, out.values().data() + (i + 1) * times, col.values()[i]);
  }
  if (grad_wanted(col)) {
    Tensor ct = col, ot = out;
    attach(out, [ct, ot, m, times]() mutable {
      std::vector<double> g = take_grad(ot);
      if (g.empty()) return;
      double* gc = ct.grad().data();
      for (std::size_t i = 0; i < m; ++i) {
        double acc = 0.0;
        for (std::size_t j = 0; j < times; ++j) acc += g[i * times + j];
        gc[i] += acc;
      }
    });
  }
  return out;
}

Tensor row_sum(const Tensor& x) {
  const std::size_t m = x.rows(), n = x.cols();
  Tensor out = Tensor::zeros(m, 1);
  for (std::size_t i = 0; i < m; ++i) {
    double acc = 0.0;
    for (std::size_t j = 0; j < n; ++j) acc += x.values()[i * n + j];
    out.values()[i] = acc;
  }
  if (grad_wanted(x)) {
    Tensor xt = x, ot = out;
    attach(out, [xt, ot, m, n]() mutable {
      std::vector<double> g = take_grad(ot);
      if (g.empty()) return;
      double* gx = xt.grad().data();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) gx[i * n + j] += g[i];
    });
  }
  return out;
}

Tensor sum_all(const Tensor& x) {
  Tensor out = Tensor::zeros(1, 1);
  double acc = 0.0;
  for (double v : x.values()) acc += v;
  out.values()[0] = acc;
  if (grad_wanted(x)) {
    Tensor xt = x, ot = out;
    attach(out, [xt, ot]() mutable {
      std::vector<double> g = take_grad(ot);
      if (g.empty()) return;
      double* gx = xt.grad().data();
      for (std::size_t i = 0; i < xt.size(); ++i) gx[i] += g[0];
    });
  }
  return out;
}

Tensor mean_all(const Tensor& x) {
  if (x.size() == 0) throw std::invalid_argument("mean_all: empty tensor");
  return scale(sum_all(x), 1.0 / static_cast<double>(x.size()));
}

Tensor select_per_row(const Tensor& x, const std::vector<int>& col_of) {
  if (col_of.size() != x.rows()) {
    throw std::invalid_argument("select_per_row: index count " + std::to_string(col_of.size()) +
                                " != row count " + std::to_string(x.rows()));
  }
  const std::size_t m = x.rows(), n = x.cols();
  for (int c : col_of) {
    if (c < 0 || static_cast<std::size_t>(c) >= n) {
      throw std::out_of_range("select_per_row: column " + std::to_string(c) + " out of range [0, " +
                              std::to_string(n) + ")");
    }
  }
  Tensor out = Tensor::zeros(m, 1);
  for (std::size_t i = 0; i < m; ++i) out.values()[i] = x.values()[i * n + col_of[i]];
  if (grad_wanted(x)) {
    Tensor xt = x, ot = out;
    attach(out, [xt, ot, col_of, m, n]() mutable {
      std::vector<double> g = take_grad(ot);
      if (g.empty()) return;
      double* gx = xt.grad().data();
      for (std::size_t i = 0; i < m; ++i) gx[i * n + col_of[i]] += g[i];
    });
  }
  return out;
}

Tensor scale_rows(const Tensor& x, const std::vector<double>& coeffs) {
  if (coeffs.size() != x.rows()) {
    throw std::invalid_argument("scale_rows: coefficient count " + std::to_string(coeffs.size()) +
                                " != row count " + std::to_string(x.rows()));
  }
  const std::size_t m = x.rows(), n = x.cols();
  Tensor out = Tensor::zeros(m, n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out.values()[i * n + j] = x.values()[i * n + j] * coeffs[i];
  if (grad_wanted(x)) {
    Tensor xt = x, ot = out;
    attach(out, [xt, ot, coeffs, m, n]() mutable {
      std::vector<double> g = take_grad(ot);
      if (g.empty()) return;
      double* gx = xt.grad().data();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) gx[i * n + j] += g[i * n + j] * coeffs[i];
    });
  }
  return out;
}

// ---- Adam ----

Adam::Adam(std::vector<Tensor> params, double lr, double beta1, double beta2, double eps)
    : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
  m_.reserve(params_.size());
  v_.reserve(params_.size());
  for (const Tensor& p : params_) {
    m_.emplace_back(p.size(), 0.0);
    v_.emplace_back(p.size(), 0.0);
  }
}

void Adam::step() {
  for (const Tensor& p : params_) {
    if (!p.has_grad()) {
      throw std::logic_error("adam_step: parameter " + p.shape_str() + " has no gradient");
    }
  }
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t k = 0; k < params_.size(); ++k) {
    Tensor& p = params_[k];
    std::vector<double>& g = p.grad();
    std::vector<double>& m = m_[k];
    std::vector<double>& v = v_[k];
    double* w = p.values().data();
    for (std::size_t i = 0; i < g.size(); ++i) {
      m[i] = beta1_ * m[i] + (1.0 - beta1_) * g[i];
      v[i] = beta2_ * v[i] + (1.0 - beta2_) * g[i] * g[i];
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      w[i] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
    }
    p.zero_grad();
  }
}

void set_matmul_threads(int n) { g_thread_override.store(n < 0 ? 0 : n); }

int matmul_threads() {
  int o = g_thread_override.load();
  return o > 0 ? o : default_threads();
}

}  // namespace gp
