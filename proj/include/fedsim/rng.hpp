#ifndef FEDSIM_RNG_HPP
#define FEDSIM_RNG_HPP

#include <cstdint>
#include <string_view>
#include <vector>

namespace fedsim {

// Deterministic random stream. Every piece of randomness in the simulator is
// drawn from a stream keyed by (seed, purpose tag, round, client), so results
// do not depend on execution order or thread count. The generator is
// splitmix64; distributions are implemented explicitly (no <random>
// distributions, whose output is implementation-defined).
class RngStream {
 public:
  explicit RngStream(std::uint64_t state) : state_(state) {}

  // Keyed derivation: hash(seed, tag, a, b).
  static RngStream derive(std::uint64_t seed, std::string_view tag,
                          std::uint64_t a = 0, std::uint64_t b = 0);

  std::uint64_t next_u64();

  // Uniform in [0, 1) with 53-bit resolution.
  double next_double();
  double uniform(double lo, double hi);

  // Uniform integer in [0, n). n must be positive.
  int uniform_int(int n);

  // Standard normal via Box-Muller (pairs cached).
  double gaussian();

  // Gamma(alpha, 1) via Marsaglia-Tsang; alpha < 1 handled by boosting.
  double gamma(double alpha);

  // Probability vector q ~ Dir(alpha) from per-component concentrations.
  std::vector<double> dirichlet(const std::vector<double>& alpha);

  // Fisher-Yates.
  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (int i = static_cast<int>(v.size()) - 1; i > 0; --i) {
      const int j = uniform_int(i + 1);
      std::swap(v[i], v[static_cast<std::size_t>(j)]);
    }
  }

 private:
  std::uint64_t state_;
  bool has_cached_gaussian_ = false;
  double cached_gaussian_ = 0.0;
};

}  // namespace fedsim

#endif  // FEDSIM_RNG_HPP
