#ifndef GP_RNG_HPP_
#define GP_RNG_HPP_

#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <vector>

namespace gp {

// Deterministic random source. Distributions are implemented by hand so that
// identical seeds give identical streams on every platform and toolchain.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}

  std::uint64_t next_u64() { return gen_(); }

  // uniform in [0, 1)
  double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // uniform integer in [0, n)
  std::uint64_t uniform_int(std::uint64_t n) {
    // rejection sampling keeps the distribution exact
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() - std::numeric_limits<std::uint64_t>::max() % n;
    std::uint64_t x = gen_();
    while (x >= limit) x = gen_();
    return x % n;
  }

  // standard normal via Box-Muller (cached spare keeps the stream compact)
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
  }

  // index sampled proportionally to probs (assumed to sum to ~1)
  int categorical(const std::vector<double>& probs) {
    const double u = uniform();
    double cdf = 0.0;
    for (std::size_t i = 0; i < probs.size(); ++i) {
      cdf += probs[i];
      if (u < cdf) return static_cast<int>(i);
    }
    return static_cast<int>(probs.size()) - 1;
  }

  // independent child stream (splitmix64 over seed and stream id)
  static std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream) {
    std::uint64_t z = master + 0x9e3779b97f4a7c15ULL * (stream + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

 private:
  std::mt19937_64 gen_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace gp

#endif  // GP_RNG_HPP_
