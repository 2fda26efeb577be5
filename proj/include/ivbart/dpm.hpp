#pragma once

#include <Eigen/Dense>
#include <boost/math/distributions/chi_squared.hpp>
#include <boost/math/distributions/students_t.hpp>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <vector>

#include "ivbart/core.hpp"
#include "ivbart/data.hpp"

namespace ivbart::dpm {

using Vec2 = Eigen::Vector2d;
using Mat2 = Eigen::Matrix2d;

// Error-pair parameters (mu, Sigma) with Sigma = L L', L = [[sigma_t, 0], [gamma, sigma_y]].
struct ThetaAtom {
  Vec2 mu = Vec2::Zero();
  double sigma_t = 1.0;
  double gamma = 0.0;
  double sigma_y = 1.0;

  Mat2 covariance() const {
    Mat2 s;
    s << sigma_t * sigma_t, sigma_t * gamma, sigma_t * gamma, gamma * gamma + sigma_y * sigma_y;
    return s;
  }

  double correlation() const { return gamma / std::sqrt(gamma * gamma + sigma_y * sigma_y); }

  static ThetaAtom from_moments(const Vec2& mu, const Mat2& sigma) {
    ThetaAtom a;
    a.mu = mu;
    a.sigma_t = std::sqrt(sigma(0, 0));
    a.gamma = sigma(1, 0) / a.sigma_t;
    a.sigma_y = std::sqrt(std::max(sigma(1, 1) - a.gamma * a.gamma, 0.0));
    return a;
  }
};

// Normal-inverse-Wishart: Sigma ~ IW(nu, scale) (so E[Sigma^-1] = nu scale^-1),
// mu | Sigma ~ N(mean, Sigma / kappa).
struct NiwParams {
  Vec2 mean = Vec2::Zero();
  double kappa = 1.0;
  double nu = 3.0;
  Mat2 scale = Mat2::Identity();
};

struct G0Params {
  double a = 0.0;
  double nu = 0.0;
  double v = 0.0;
};

inline NiwParams base_measure(const DpmPrior& prior) {
  return {Vec2::Zero(), prior.a, prior.nu, prior.v * Mat2::Identity()};
}

struct SuffStats {
  double count = 0.0;
  Vec2 sum = Vec2::Zero();
  Mat2 outer = Mat2::Zero();

  void add(const Vec2& y) {
    count += 1.0;
    sum += y;
    outer += y * y.transpose();
  }
  void remove(const Vec2& y) {
    count -= 1.0;
    sum -= y;
    outer -= y * y.transpose();
  }
};

inline NiwParams niw_posterior(const NiwParams& prior, const SuffStats& s) {
  if (s.count <= 0.0) return prior;
  NiwParams post;
  const double m = s.count;
  const Vec2 ybar = s.sum / m;
  const Mat2 scatter = s.outer - m * ybar * ybar.transpose();
  post.kappa = prior.kappa + m;
  post.nu = prior.nu + m;
  post.mean = (prior.kappa * prior.mean + s.sum) / post.kappa;
  const Vec2 d = ybar - prior.mean;
  post.scale = prior.scale + scatter + (prior.kappa * m / post.kappa) * d * d.transpose();
  post.scale = 0.5 * (post.scale + post.scale.transpose());
  return post;
}

// Posterior predictive of one new pair: bivariate t with nu - 1 degrees of freedom.
class Predictive {
 public:
  Predictive() = default;
  explicit Predictive(const NiwParams& p) {
    df_ = p.nu - 1.0;
    loc_ = p.mean;
    const Mat2 shape = p.scale * (p.kappa + 1.0) / (p.kappa * df_);
    const double det = shape.determinant();
    inv_ = shape.inverse();
    log_norm_ = std::lgamma(0.5 * (df_ + 2.0)) - std::lgamma(0.5 * df_) -
                std::log(df_ * std::numbers::pi) - 0.5 * std::log(det);
  }

  double log_density(const Vec2& y) const {
    const Vec2 d = y - loc_;
    const double q = d.dot(inv_ * d);
    return log_norm_ - 0.5 * (df_ + 2.0) * std::log1p(q / df_);
  }

 private:
  double df_ = 1.0;
  Vec2 loc_ = Vec2::Zero();
  Mat2 inv_ = Mat2::Identity();
  double log_norm_ = 0.0;
};

// Sigma ~ IW(nu, scale): Sigma^-1 ~ Wishart_nu(scale^-1) drawn with the
// Bartlett decomposition (valid for non-integer nu > 1).
inline Mat2 draw_inverse_wishart(double nu, const Mat2& scale, Random& rng) {
  const Mat2 wscale = scale.inverse();
  const Eigen::LLT<Mat2> llt(0.5 * (wscale + wscale.transpose()));
  const Mat2 l = llt.matrixL();
  Mat2 a = Mat2::Zero();
  a(0, 0) = std::sqrt(rng.chi_squared(nu));
  a(1, 1) = std::sqrt(rng.chi_squared(nu - 1.0));
  a(1, 0) = rng.normal();
  const Mat2 la = l * a;
  const Mat2 precision = la * la.transpose();
  Mat2 sigma = precision.inverse();
  return 0.5 * (sigma + sigma.transpose());
}

inline ThetaAtom draw_niw(const NiwParams& p, Random& rng) {
  const Mat2 sigma = draw_inverse_wishart(p.nu, p.scale, rng);
  const Eigen::LLT<Mat2> chol(sigma / p.kappa);
  const Vec2 mu = p.mean + Mat2(chol.matrixL()) * Vec2(rng.normal(), rng.normal());
  return ThetaAtom::from_moments(mu, sigma);
}

inline ThetaAtom sample_g0(const DpmPrior& prior, Random& rng) {
  if (!(prior.a > 0.0 && prior.nu > 1.0 && prior.v > 0.0))
    throw Error("sample_g0: base measure parameters are not solved");
  return draw_niw(base_measure(prior), rng);
}

inline constexpr double kMinNu = 1.0 + 1e-6;

// Finds (a, nu, v) so that, under sigma11 ~ v / chi2_{nu-1} and
// mu1 ~ sqrt(v / (a (nu-1))) t_{nu-1},
//   P(sigma1 < c1) = P(sigma1 > c2) = kappa/2 and P(|mu1| < c3) = 1 - kappa.
inline G0Params solve_g0(double c1, double c2, double c3, double kappa) {
  if (!(c1 > 0.0 && c1 < c2)) throw Error("solve_g0: need 0 < c1 < c2");
  if (!(c3 > 0.0)) throw Error("solve_g0: need c3 > 0");
  if (!(kappa > 0.0 && kappa < 1.0)) throw Error("solve_g0: need 0 < kappa < 1");

  const double target = 2.0 * std::log(c2 / c1);
  auto gap = [&](double log_df) {
    const boost::math::chi_squared chi(std::exp(log_df));
    const double hi = boost::math::quantile(chi, 1.0 - 0.5 * kappa);
    const double lo = boost::math::quantile(chi, 0.5 * kappa);
    if (!(lo > 0.0)) return std::numeric_limits<double>::infinity();
    return std::log(hi) - std::log(lo) - target;
  };

  // The quantile ratio decreases in the degrees of freedom.
  double lo = std::log(kMinNu - 1.0), hi = std::log(1e6);
  const double g_lo = gap(lo), g_hi = gap(hi);
  if (!(g_lo > 0.0) || !(g_hi < 0.0)) {
    throw Error("solve_g0: no root for nu in bracket [" + std::to_string(kMinNu) + ", " +
                std::to_string(1.0 + 1e6) + "]");
  }
  for (int it = 0; it < 200 && hi - lo > 1e-14; ++it) {
    const double mid = 0.5 * (lo + hi);
    (gap(mid) > 0.0 ? lo : hi) = mid;
  }
  const double df = std::exp(0.5 * (lo + hi));
  const boost::math::chi_squared chi(df);
  const double v = c1 * c1 * boost::math::quantile(chi, 1.0 - 0.5 * kappa);
  const double tq = boost::math::quantile(boost::math::students_t(df), 1.0 - 0.5 * kappa);
  const double a = v * tq * tq / (c3 * c3 * df);
  return {a, 1.0 + df, v};
}

// log |s(n, k)| for k = 0..n (unsigned Stirling numbers of the first kind).
inline std::vector<double> log_stirling_first(std::size_t n) {
  const double ninf = -std::numeric_limits<double>::infinity();
  std::vector<double> row(n + 1, ninf), next(n + 1, ninf);
  row[0] = 0.0;
  for (std::size_t m = 0; m < n; ++m) {
    const double lm = m > 0 ? std::log(static_cast<double>(m)) : ninf;
    next[0] = ninf;
    for (std::size_t k = 1; k <= m + 1; ++k) {
      const double stay = (k <= m && m > 0) ? lm + row[k] : ninf;
      next[k] = log_sum_exp(stay, row[k - 1]);
    }
    std::swap(row, next);
  }
  return row;
}

// p(I = k | alpha, n), k = 0..n, normalized.
inline std::vector<double> cluster_count_prior(double alpha, const std::vector<double>& log_stirling) {
  const std::size_t n = log_stirling.size() - 1;
  std::vector<double> lp(n + 1, -std::numeric_limits<double>::infinity());
  double mx = lp[0];
  for (std::size_t k = 1; k <= n; ++k) {
    lp[k] = log_stirling[k] + static_cast<double>(k) * std::log(alpha);
    mx = std::max(mx, lp[k]);
  }
  double total = 0.0;
  for (std::size_t k = 1; k <= n; ++k) total += std::exp(lp[k] - mx);
  std::vector<double> p(n + 1, 0.0);
  for (std::size_t k = 1; k <= n; ++k) p[k] = std::exp(lp[k] - mx) / total;
  return p;
}

inline int cluster_count_mode(double alpha, const std::vector<double>& log_stirling) {
  const double la = std::log(alpha);
  int best = 1;
  double best_v = -std::numeric_limits<double>::infinity();
  for (std::size_t k = 1; k < log_stirling.size(); ++k) {
    const double v = log_stirling[k] + static_cast<double>(k) * la;
    if (v > best_v) {
      best_v = v;
      best = static_cast<int>(k);
    }
  }
  return best;
}

struct AlphaBounds {
  double alpha_min = 0.0;
  double alpha_max = 0.0;
};

inline constexpr double kAlphaCeiling = 1e6;

namespace detail {

// Smallest alpha (to bisection tolerance) with mode(I | alpha) >= k.
inline double alpha_threshold(int k, const std::vector<double>& ls) {
  if (k <= 1) return 0.0;
  double lo = std::log(1e-12), hi = std::log(kAlphaCeiling);
  if (cluster_count_mode(std::exp(hi), ls) < k) return std::numeric_limits<double>::infinity();
  for (int it = 0; it < 200 && hi - lo > 1e-13; ++it) {
    const double mid = 0.5 * (lo + hi);
    (cluster_count_mode(std::exp(mid), ls) >= k ? hi : lo) = mid;
  }
  return std::exp(hi);
}

// Midpoint of the alpha interval on which the prior mode of I equals k.
inline double alpha_for_mode(int k, const std::vector<double>& ls) {
  const double lo = alpha_threshold(k, ls);
  const double hi = alpha_threshold(k + 1, ls);
  if (!std::isfinite(lo)) {
    throw Error("solve_alpha_bounds: mode " + std::to_string(k) +
                " is not reachable for alpha <= " + std::to_string(kAlphaCeiling));
  }
  if (!std::isfinite(hi)) return 0.5 * (lo + kAlphaCeiling);
  return 0.5 * (lo + hi);
}

}  // namespace detail

inline AlphaBounds solve_alpha_bounds(std::size_t n, int i_min, int i_max) {
  if (i_min < 1 || i_min > i_max || static_cast<std::size_t>(i_max) > n)
    throw Error("solve_alpha_bounds: need 1 <= i_min <= i_max <= n");
  const auto ls = log_stirling_first(n);
  return {detail::alpha_for_mode(i_min, ls), detail::alpha_for_mode(i_max, ls)};
}

// Unnormalized prior on [alpha_min, alpha_max]; zero outside.
inline double alpha_prior_density(double alpha, double alpha_min, double alpha_max, double psi) {
  if (alpha < alpha_min || alpha > alpha_max) return 0.0;
  return std::pow(1.0 - (alpha - alpha_min) / (alpha_max - alpha_min), psi);
}

// Fills in (a, nu, v) and the alpha bounds for a sample of size n.
inline DpmPrior solve_prior(DpmPrior prior, std::size_t n) {
  prior.validate_calibration();
  const auto g0 = solve_g0(prior.c1, prior.c2, prior.c3, prior.kappa);
  prior.a = g0.a;
  prior.nu = std::max(g0.nu, kMinNu);
  prior.v = g0.v;
  if (prior.i_max <= 0) prior.i_max = default_i_max(n);
  prior.i_max = std::min<int>(prior.i_max, static_cast<int>(n));
  prior.i_min = std::min(prior.i_min, prior.i_max);
  const auto ab = solve_alpha_bounds(n, prior.i_min, prior.i_max);
  prior.alpha_min = ab.alpha_min;
  prior.alpha_max = ab.alpha_max;
  return prior;
}

struct AlphaGrid {
  std::vector<double> alpha;
  std::vector<double> prob;
};

inline constexpr int kAlphaGridPoints = 100;

// Full conditional of alpha on the uniform grid, given I clusters among n.
inline AlphaGrid alpha_grid_posterior(int clusters, std::size_t n, const DpmPrior& prior,
                                      int points = kAlphaGridPoints) {
  AlphaGrid g;
  g.alpha.resize(static_cast<std::size_t>(points));
  std::vector<double> lw(static_cast<std::size_t>(points));
  for (int k = 0; k < points; ++k) {
    const double a = prior.alpha_min + (prior.alpha_max - prior.alpha_min) * k / (points - 1);
    g.alpha[static_cast<std::size_t>(k)] = a;
    const double dens = alpha_prior_density(a, prior.alpha_min, prior.alpha_max, prior.psi);
    lw[static_cast<std::size_t>(k)] =
        (dens > 0.0 && a > 0.0)
            ? std::log(dens) + clusters * std::log(a) + std::lgamma(a) - std::lgamma(a + static_cast<double>(n))
            : -std::numeric_limits<double>::infinity();
  }
  const double mx = *std::max_element(lw.begin(), lw.end());
  double total = 0.0;
  for (double v : lw) total += std::exp(v - mx);
  g.prob.resize(lw.size());
  for (std::size_t k = 0; k < lw.size(); ++k) g.prob[k] = std::exp(lw[k] - mx) / total;
  return g;
}

struct DpmState {
  std::vector<int> assignments;
  std::vector<ThetaAtom> atoms;
  std::vector<int> counts;
  double alpha = 1.0;

  std::size_t num_clusters() const { return atoms.size(); }
  const ThetaAtom& atom_of(std::size_t i) const {
    return atoms[static_cast<std::size_t>(assignments[i])];
  }

  // One cluster holding every observation.
  static DpmState single(std::size_t n, ThetaAtom atom, double alpha) {
    DpmState s;
    s.assignments.assign(n, 0);
    s.atoms = {atom};
    s.counts = {static_cast<int>(n)};
    s.alpha = alpha;
    return s;
  }

  void check(double alpha_min, double alpha_max) const {
    long total = 0;
    for (int c : counts) {
      if (c <= 0) throw Error("dpm state: empty cluster retained");
      total += c;
    }
    if (static_cast<std::size_t>(total) != assignments.size())
      throw Error("dpm state: counts do not sum to n");
    if (counts.size() != atoms.size()) throw Error("dpm state: counts/atoms mismatch");
    for (int a : assignments)
      if (a < 0 || static_cast<std::size_t>(a) >= atoms.size())
        throw Error("dpm state: label out of range");
    if (alpha < alpha_min - 1e-12 || alpha > alpha_max + 1e-12)
      throw Error("dpm state: alpha outside its bounds");
  }
};

struct SweepOptions {
  bool resample_assignments = true;
  bool update_alpha = true;
};

// One Gibbs pass: collapsed reassignment of every observation, atom redraw
// from the conjugate posterior of each cluster, and alpha on its grid.
// `residuals` is n x 2.
inline void dpm_sweep(DpmState& state, const Eigen::MatrixX2d& residuals, const DpmPrior& prior,
                      Random& rng, const SweepOptions& opt = {}) {
  const auto n = static_cast<std::size_t>(residuals.rows());
  if (state.assignments.size() != n) throw Error("dpm_sweep: residual rows do not match state");
  const NiwParams g0 = base_measure(prior);

  std::vector<SuffStats> stats(state.atoms.size());
  for (std::size_t i = 0; i < n; ++i)
    stats[static_cast<std::size_t>(state.assignments[i])].add(residuals.row(static_cast<Eigen::Index>(i)).transpose());

  if (opt.resample_assignments) {
    const Predictive fresh(g0);
    std::vector<Predictive> pred(stats.size());
    for (std::size_t k = 0; k < stats.size(); ++k) pred[k] = Predictive(niw_posterior(g0, stats[k]));
    std::vector<double> lw;
    const double log_alpha = std::log(state.alpha);

    for (std::size_t i = 0; i < n; ++i) {
      const Vec2 y = residuals.row(static_cast<Eigen::Index>(i)).transpose();
      auto k = static_cast<std::size_t>(state.assignments[i]);
      stats[k].remove(y);
      if (stats[k].count < 0.5) {
        // Drop the now-empty cluster by moving the last one into its slot.
        const std::size_t last = stats.size() - 1;
        if (k != last) {
          stats[k] = stats[last];
          pred[k] = pred[last];
          for (auto& a : state.assignments)
            if (a == static_cast<int>(last)) a = static_cast<int>(k);
        }
        stats.pop_back();
        pred.pop_back();
      } else {
        pred[k] = Predictive(niw_posterior(g0, stats[k]));
      }

      lw.resize(stats.size() + 1);
      for (std::size_t c = 0; c < stats.size(); ++c)
        lw[c] = std::log(stats[c].count) + pred[c].log_density(y);
      lw.back() = log_alpha + fresh.log_density(y);
      const std::size_t pick = rng.categorical_log(lw);
      if (pick == stats.size()) {
        stats.emplace_back();
        pred.emplace_back();
      }
      stats[pick].add(y);
      pred[pick] = Predictive(niw_posterior(g0, stats[pick]));
      state.assignments[i] = static_cast<int>(pick);
    }
  }

  state.atoms.resize(stats.size());
  state.counts.resize(stats.size());
  for (std::size_t k = 0; k < stats.size(); ++k) {
    state.atoms[k] = draw_niw(niw_posterior(g0, stats[k]), rng);
    state.counts[k] = static_cast<int>(std::lround(stats[k].count));
  }

  if (opt.update_alpha && prior.alpha_max > prior.alpha_min) {
    const auto grid = alpha_grid_posterior(static_cast<int>(stats.size()), n, prior);
    std::vector<double> lp(grid.prob.size());
    for (std::size_t k = 0; k < lp.size(); ++k)
      lp[k] = grid.prob[k] > 0.0 ? std::log(grid.prob[k]) : -std::numeric_limits<double>::infinity();
    state.alpha = grid.alpha[rng.categorical_log(lp)];
  }
}

}  // namespace ivbart::dpm
