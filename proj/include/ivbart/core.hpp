#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <limits>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace ivbart {

inline constexpr const char* kVersion = "0.3.0";

// All recoverable failures (bad input, solver brackets, parse errors)
// surface as ivbart::Error.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// splitmix64 finalizer; used to derive independent stream seeds from a
// master seed so that replications and grid points do not depend on the
// order in which they are scheduled.
inline std::uint64_t mix_seed(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t master,
                                 std::initializer_list<std::uint64_t> path) {
  std::uint64_t s = mix_seed(master);
  for (auto p : path) s = mix_seed(s ^ mix_seed(p + 0x632be59bd9b4e019ULL));
  return s;
}

// Thin wrapper over a 64-bit Mersenne twister with the handful of draws
// the samplers need. Owned by exactly one chain.
class Random {
 public:
  using engine_type = std::mt19937_64;

  explicit Random(std::uint64_t seed = 5489u) : eng_(seed) {}

  double uniform() { return std::uniform_real_distribution<double>(0.0, 1.0)(eng_); }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  double normal() { return normal_(eng_); }
  double normal(double mean, double sd) { return mean + sd * normal_(eng_); }

  double gamma(double shape, double scale = 1.0) {
    return std::gamma_distribution<double>(shape, scale)(eng_);
  }
  double chi_squared(double df) { return 2.0 * gamma(0.5 * df); }
  double student_t(double df) { return normal() / std::sqrt(chi_squared(df) / df); }

  // Uniform index in [0, n).
  std::size_t index(std::size_t n) {
    return std::uniform_int_distribution<std::size_t>(0, n - 1)(eng_);
  }

  // Draws an index with probability proportional to exp(log_weights[k]).
  std::size_t categorical_log(std::span<const double> log_weights) {
    double mx = -std::numeric_limits<double>::infinity();
    for (double w : log_weights) mx = std::max(mx, w);
    double total = 0.0;
    for (double w : log_weights) total += std::exp(w - mx);
    double u = uniform() * total;
    for (std::size_t k = 0; k < log_weights.size(); ++k) {
      u -= std::exp(log_weights[k] - mx);
      if (u <= 0.0) return k;
    }
    // Round-off fallback: last index with nonzero weight.
    for (std::size_t k = log_weights.size(); k-- > 0;)
      if (std::isfinite(log_weights[k])) return k;
    return log_weights.size() - 1;
  }

  engine_type& engine() { return eng_; }

 private:
  engine_type eng_;
  std::normal_distribution<double> normal_{0.0, 1.0};
};

inline double log_sum_exp(double a, double b) {
  if (a == -std::numeric_limits<double>::infinity()) return b;
  if (b == -std::numeric_limits<double>::infinity()) return a;
  double m = std::max(a, b);
  return m + std::log1p(std::exp(-std::abs(a - b)));
}

}  // namespace ivbart
