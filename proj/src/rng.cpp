#include "fedsim/rng.hpp"

#include <cmath>

#include "fedsim/errors.hpp"

namespace fedsim {

namespace {

std::uint64_t splitmix64(std::uint64_t& state) {
  state += 0x9e3779b97f4a7c15ULL;
  std::uint64_t z = state;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const char c : s) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace

RngStream RngStream::derive(std::uint64_t seed, std::string_view tag,
                            std::uint64_t a, std::uint64_t b) {
  std::uint64_t s = seed;
  s ^= splitmix64(s) ^ fnv1a(tag);
  s ^= splitmix64(s) ^ (a * 0x9e3779b97f4a7c15ULL);
  s ^= splitmix64(s) ^ (b * 0xc2b2ae3d27d4eb4fULL);
  splitmix64(s);
  return RngStream(s);
}

std::uint64_t RngStream::next_u64() { return splitmix64(state_); }

double RngStream::next_double() {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double RngStream::uniform(double lo, double hi) {
  return lo + (hi - lo) * next_double();
}

int RngStream::uniform_int(int n) {
  if (n <= 0) throw ContractError("RngStream::uniform_int: n must be positive");
  return static_cast<int>(
      (static_cast<unsigned __int128>(next_u64()) * static_cast<unsigned __int128>(n)) >> 64);
}

double RngStream::gaussian() {
  if (has_cached_gaussian_) {
    has_cached_gaussian_ = false;
    return cached_gaussian_;
  }
  double u1 = next_double();
  const double u2 = next_double();
  if (u1 <= 0.0) u1 = 0x1.0p-53;
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double theta = 2.0 * M_PI * u2;
  cached_gaussian_ = r * std::sin(theta);
  has_cached_gaussian_ = true;
  return r * std::cos(theta);
}

double RngStream::gamma(double alpha) {
  if (alpha <= 0.0) throw ContractError("RngStream::gamma: alpha must be positive");
  if (alpha < 1.0) {
    // Gamma(a) = Gamma(a+1) * U^(1/a) for a < 1.
    double u = next_double();
    if (u <= 0.0) u = 0x1.0p-53;
    return gamma(alpha + 1.0) * std::pow(u, 1.0 / alpha);
  }
  const double d = alpha - 1.0 / 3.0;
  const double c = 1.0 / std::sqrt(9.0 * d);
  for (;;) {
    double x;
    double v;
    do {
      x = gaussian();
      v = 1.0 + c * x;
    } while (v <= 0.0);
    v = v * v * v;
    const double u = next_double();
    if (u < 1.0 - 0.0331 * x * x * x * x) return d * v;
    if (u > 0.0 && std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v;
  }
}

std::vector<double> RngStream::dirichlet(const std::vector<double>& alpha) {
  std::vector<double> q(alpha.size());
  double total = 0.0;
  for (std::size_t i = 0; i < alpha.size(); ++i) {
    q[i] = gamma(alpha[i]);
    total += q[i];
  }
  if (total <= 0.0) {
    // All gamma draws underflowed; fall back to a point mass on one class.
    q.assign(alpha.size(), 0.0);
    q[static_cast<std::size_t>(uniform_int(static_cast<int>(alpha.size())))] = 1.0;
    return q;
  }
  for (double& v : q) v /= total;
  return q;
}

}  // namespace fedsim
