#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <stdexcept>

#include "gp/rng.hpp"
#include "gp/tensor.hpp"
#include "testutil.hpp"

using namespace gp;
using gptest::max_grad_rel_err;
using gptest::random_tensor;

TEST_CASE("matmul values") {
  const Tensor a = Tensor::from_vector(2, 2, {1, 2, 3, 4});
  const Tensor identity = Tensor::from_vector(2, 2, {1, 0, 0, 1});
  const Tensor r = matmul(a, identity);
  CHECK(r.values() == std::vector<double>{1, 2, 3, 4});

  const Tensor row = Tensor::from_vector(1, 2, {1, 2});
  const Tensor col = Tensor::from_vector(2, 1, {3, 4});
  CHECK(matmul(row, col).item() == 11.0);

  CHECK_THROWS_AS(matmul(row, row), std::invalid_argument);
}

TEST_CASE("matmul backward matches finite differences") {
  Rng rng(11);
  Tensor a = random_tensor(rng, 3, 4, -2, 2, true);
  Tensor b = random_tensor(rng, 4, 2, -2, 2, true);
  const double err = max_grad_rel_err({a, b}, [&] { return sum_all(tanh_act(matmul(a, b))); });
  CHECK(err < 1e-6);
}

TEST_CASE("elementwise ops") {
  const Tensor one = Tensor::scalar(1.0);
  const Tensor two = Tensor::scalar(2.0);
  CHECK(add(one, two).item() == 3.0);

  Tensor x = Tensor::from_vector(1, 3, {1, -2, 3}, true);
  const Tensor zero = Tensor::zeros(1, 3);
  Tape tape;
  {
    Tape::Scope scope(tape);
    backward(sum_all(mul(x, zero)));
  }
  CHECK(mul(x, zero).values() == std::vector<double>{0, 0, 0});
  CHECK(x.grad() == std::vector<double>{0, 0, 0});

  CHECK_THROWS_AS(add(one, Tensor::zeros(2, 2)), std::invalid_argument);
}

TEST_CASE("sub backward: d(a-b)/db = -1") {
  Rng rng(5);
  Tensor a = random_tensor(rng, 2, 3, -2, 2, true);
  Tensor b = random_tensor(rng, 2, 3, -2, 2, true);
  const double err = max_grad_rel_err({a, b}, [&] { return sum_all(sub(a, b)); });
  CHECK(err < 1e-6);
  CHECK(b.grad() == std::vector<double>(6, -1.0));
}

TEST_CASE("activations") {
  const Tensor x = Tensor::from_vector(1, 2, {-1, 2});
  CHECK(relu(x).values() == std::vector<double>{0, 2});
  CHECK(leaky_relu(Tensor::scalar(-1.0), 0.01).item() == -0.01);
  CHECK_THROWS_AS(leaky_relu(x, 1.5), std::invalid_argument);

  Rng rng(7);
  Tensor s = random_tensor(rng, 2, 3, -2, 2, true);
  const double err = max_grad_rel_err({s}, [&] { return sum_all(sigmoid(s)); });
  CHECK(err < 1e-6);
  // analytic form sigma(x)(1-sigma(x))
  const Tensor y = sigmoid(s);
  for (std::size_t i = 0; i < s.size(); ++i) {
    CHECK(s.grad()[i] == doctest::Approx(y.values()[i] * (1 - y.values()[i])).epsilon(1e-12));
  }
}

TEST_CASE("leaky_relu derivative at zero takes the positive branch") {
  Tensor x = Tensor::from_vector(1, 1, {0.0}, true);
  Tape tape;
  Tape::Scope scope(tape);
  backward(sum_all(leaky_relu(x, 0.01)));
  CHECK(x.grad()[0] == 1.0);
}

TEST_CASE("softmax_rows") {
  CHECK(softmax_rows(Tensor::from_vector(1, 2, {0, 0})).values() == std::vector<double>{0.5, 0.5});
  const Tensor big = softmax_rows(Tensor::from_vector(1, 2, {1000, 1000}));
  CHECK(big.values()[0] == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(std::isfinite(big.values()[0]));

  const Tensor direct = softmax_rows(Tensor::from_vector(1, 3, {1, 2, 3}));
  const double z = std::exp(1.0) + std::exp(2.0) + std::exp(3.0);
  for (int j = 0; j < 3; ++j) {
    CHECK(std::abs(direct.values()[j] - std::exp(1.0 + j) / z) < 1e-12);
  }

  Rng rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    const Tensor t = softmax_rows(random_tensor(rng, 3, 4, -30, 30));
    for (std::size_t r = 0; r < t.rows(); ++r) {
      double sum = 0.0;
      for (std::size_t c = 0; c < t.cols(); ++c) {
        sum += t.at(r, c);
        CHECK(t.at(r, c) > 0.0);
      }
      CHECK(std::abs(sum - 1.0) <= 1e-12);
    }
  }
}

TEST_CASE("segment_sum") {
  const Tensor values = Tensor::from_vector(3, 1, {1, 2, 3});
  const Tensor out = segment_sum(values, {0, 0, 1}, 3);
  CHECK(out.values() == std::vector<double>{3, 3, 0});

  const Tensor single = segment_sum(Tensor::from_vector(1, 2, {5, 6}), {0}, 1);
  CHECK(single.values() == std::vector<double>{5, 6});

  CHECK_THROWS_AS(segment_sum(values, {0, 0, 3}, 3), std::out_of_range);

  // random instance against a per-node loop
  Rng rng(17);
  const Tensor v = random_tensor(rng, 20, 5);
  std::vector<int> seg(20);
  for (int& s : seg) s = static_cast<int>(rng.uniform_int(7));
  const Tensor got = segment_sum(v, seg, 7);
  for (int node = 0; node < 7; ++node) {
    for (int d = 0; d < 5; ++d) {
      double want = 0.0;
      for (int e = 0; e < 20; ++e)
        if (seg[e] == node) want += v.at(e, d);
      CHECK(got.at(node, d) == want);  // bitwise: same accumulation order
    }
  }
}

TEST_CASE("concat_cols") {
  CHECK(concat_cols(Tensor::scalar(1), Tensor::scalar(2)).values() == std::vector<double>{1, 2});
  const Tensor a = Tensor::from_vector(2, 2, {1, 2, 3, 4});
  CHECK(concat_cols(a, Tensor::zeros(2, 0)).values() == a.values());
  CHECK_THROWS_AS(concat_cols(a, Tensor::zeros(3, 1)), std::invalid_argument);

  Rng rng(23);
  Tensor x = random_tensor(rng, 3, 2, -2, 2, true);
  Tensor y = random_tensor(rng, 3, 4, -2, 2, true);
  const double err =
      max_grad_rel_err({x, y}, [&] { return sum_all(tanh_act(concat_cols(x, y))); });
  CHECK(err < 1e-6);
}

TEST_CASE("backward: sum and squared norm") {
  Rng rng(9);
  Tensor w = random_tensor(rng, 2, 3, -2, 2, true);
  {
    Tape tape;
    Tape::Scope scope(tape);
    backward(sum_all(w));
    CHECK(w.grad() == std::vector<double>(6, 1.0));
  }
  w.zero_grad();
  {
    Tape tape;
    Tape::Scope scope(tape);
    backward(scale(sum_all(mul(w, w)), 0.5));
    for (std::size_t i = 0; i < w.size(); ++i) {
      CHECK(w.grad()[i] == doctest::Approx(w.values()[i]).epsilon(1e-15));
    }
  }
  CHECK_THROWS_AS(backward(Tensor::zeros(2, 2)), std::invalid_argument);
}

TEST_CASE("backward accumulates additively across repeated calls") {
  Rng rng(13);
  Tensor w = random_tensor(rng, 2, 2, -2, 2, true);
  Tape tape;
  Tape::Scope scope(tape);
  const Tensor loss = sum_all(mul(w, w));
  backward(loss);
  const std::vector<double> once = w.grad();
  backward(loss);
  for (std::size_t i = 0; i < once.size(); ++i) {
    CHECK(w.grad()[i] == doctest::Approx(2.0 * once[i]).epsilon(1e-15));
  }
}

TEST_CASE("backward is deterministic") {
  auto run = [] {
    Rng rng(31);
    Tensor a = random_tensor(rng, 4, 4, -2, 2, true);
    Tensor b = random_tensor(rng, 4, 4, -2, 2, true);
    Tape tape;
    Tape::Scope scope(tape);
    backward(sum_all(sigmoid(matmul(a, matmul(a, b)))));
    return std::make_pair(a.grad(), b.grad());
  };
  const auto first = run();
  const auto second = run();
  CHECK(first.first == second.first);    // bitwise
  CHECK(first.second == second.second);  // bitwise
}

TEST_CASE("finite differences across the op set") {
  Rng rng(41);
  const std::vector<int> seg = {0, 0, 1, 2, 2, 2};

  struct Case {
    const char* name;
    std::function<Tensor(Tensor&)> build;
    double lo = -2.0, hi = 2.0;
  };
  const std::vector<Case> cases = {
      {"scale", [](Tensor& x) { return sum_all(scale(x, -1.7)); }},
      {"add_scalar", [](Tensor& x) { return sum_all(mul(add_scalar(x, 0.3), x)); }},
      {"tanh", [](Tensor& x) { return sum_all(tanh_act(x)); }},
      {"exp", [](Tensor& x) { return sum_all(exp_op(scale(x, 0.3))); }},
      {"log", [](Tensor& x) { return sum_all(log_op(x)); }, 0.2, 2.0},
      {"softmax", [](Tensor& x) { return sum_all(mul(softmax_rows(x), x)); }},
      {"log_softmax", [](Tensor& x) { return sum_all(mul(log_softmax_rows(x), x)); }},
      {"row_sum", [](Tensor& x) { return sum_all(tanh_act(row_sum(x))); }},
      {"mean_all", [](Tensor& x) { return mean_all(mul(x, x)); }},
      {"repeat_usage",
       [](Tensor& x) {
         const Tensor col = row_sum(x);
         return sum_all(mul(repeat_cols(col, 3), x));
       }},
      {"slice_concat",
       [](Tensor& x) {
         return sum_all(mul(concat_cols(slice_cols(x, 1, 2), slice_cols(x, 0, 1)), x));
       }},
      {"segment_sum_grad", [&seg](Tensor& x) { return sum_all(tanh_act(segment_sum(x, seg, 4))); }},
      {"segment_softmax_grad",
       [&seg](Tensor& x) {
         const Tensor col = row_sum(x);
         return sum_all(mul(segment_softmax(col, seg, 4), col));
       }},
      {"gather_scatter",
       [](Tensor& x) {
         return sum_all(tanh_act(scatter_rows(gather_rows(x, {4, 1, 3}), {1, 0, 2}, 4)));
       }},
      {"select_per_row", [](Tensor& x) { return sum_all(select_per_row(x, {2, 0, 1, 1, 2, 0})); }},
      {"scale_rows",
       [](Tensor& x) {
         return sum_all(scale_rows(x, {0.5, -1.0, 2.0, 0.25, 3.0, -0.5}));
       }},
  };
  for (const Case& c : cases) {
    CAPTURE(c.name);
    Tensor x = random_tensor(rng, 6, 3, c.lo, c.hi, true);
    const double err = max_grad_rel_err({x}, [&] { return c.build(x); });
    CHECK_MESSAGE(err < 1e-4, c.name);
  }
}

TEST_CASE("minimum and clamp backward pick the active branch") {
  Rng rng(43);
  // keep inputs away from the non-differentiable boundaries
  Tensor a = Tensor::from_vector(2, 2, {0.4, -1.2, 1.7, 0.9}, true);
  Tensor b = Tensor::from_vector(2, 2, {0.9, -1.5, 0.2, 0.8}, true);
  double err = max_grad_rel_err({a, b}, [&] { return sum_all(minimum(a, b)); });
  CHECK(err < 1e-6);
  Tensor x = Tensor::from_vector(1, 4, {-1.5, -0.2, 0.3, 1.8}, true);
  err = max_grad_rel_err({x}, [&] { return sum_all(mul(clamp(x, -1.0, 1.0), x)); });
  CHECK(err < 1e-4);
}

TEST_CASE("adam") {
  SUBCASE("one step on f(w) = w^2 decreases w") {
    Tensor w = Tensor::from_vector(1, 1, {1.0}, true);
    Adam opt({w}, 0.1);
    Tape tape;
    Tape::Scope scope(tape);
    backward(mul(w, w));
    opt.step();
    CHECK(w.item() < 1.0);
    CHECK(w.grad() == std::vector<double>{0.0});  // zeroed after the step
  }
  SUBCASE("zero grad leaves parameters unchanged") {
    Tensor w = Tensor::from_vector(1, 2, {1.0, -2.0}, true);
    Adam opt({w});
    w.grad();  // allocate zeros
    opt.step();
    CHECK(w.values() == std::vector<double>{1.0, -2.0});
  }
  SUBCASE("missing grad is a usage error") {
    Tensor w = Tensor::from_vector(1, 1, {1.0}, true);
    Adam opt({w});
    CHECK_THROWS_AS(opt.step(), std::logic_error);
  }
  SUBCASE("200 steps on a 2-D quadratic reach the optimum") {
    Tensor w = Tensor::from_vector(1, 2, {1.0, -1.0}, true);
    Adam opt({w}, 0.05);
    for (int i = 0; i < 200; ++i) {
      Tape tape;
      Tape::Scope scope(tape);
      backward(scale(sum_all(mul(w, w)), 0.5));
      opt.step();
    }
    CHECK(std::sqrt(w.values()[0] * w.values()[0] + w.values()[1] * w.values()[1]) < 1e-3);
  }
}
