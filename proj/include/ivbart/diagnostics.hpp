#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <span>
#include <utility>
#include <vector>

#include "ivbart/core.hpp"

namespace ivbart::diag {

inline double mean(std::span<const double> x) {
  return std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size());
}

inline double sd(std::span<const double> x) {
  const double m = mean(x);
  double ss = 0.0;
  for (double v : x) ss += (v - m) * (v - m);
  return std::sqrt(ss / static_cast<double>(x.size() - 1));
}

// Type-7 quantile (linear interpolation between order statistics).
inline double quantile(std::vector<double> x, double prob) {
  if (x.empty()) throw Error("quantile of an empty sample");
  std::sort(x.begin(), x.end());
  const double h = (static_cast<double>(x.size()) - 1.0) * prob;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const auto hi = std::min(lo + 1, x.size() - 1);
  return x[lo] + (h - static_cast<double>(lo)) * (x[hi] - x[lo]);
}

struct Interval {
  double lo = 0.0;
  double hi = 0.0;
  double width() const { return hi - lo; }
  bool contains(double v) const { return lo <= v && v <= hi; }
};

inline constexpr std::size_t kMinIntervalDraws = 40;

inline Interval interval_summary(std::span<const double> draws, double level = 0.95) {
  if (draws.size() < kMinIntervalDraws)
    throw Error("interval_summary: need at least " + std::to_string(kMinIntervalDraws) + " draws, got " +
                std::to_string(draws.size()));
  std::vector<double> v(draws.begin(), draws.end());
  const double tail = 0.5 * (1.0 - level);
  return {quantile(v, tail), quantile(v, 1.0 - tail)};
}

// Sample autocorrelations r_0..r_max_lag with the usual 1/N autocovariance.
inline std::vector<double> acf(std::span<const double> x, std::size_t max_lag) {
  if (x.size() <= max_lag) throw Error("acf: series shorter than max_lag + 1");
  const double m = mean(x);
  const std::size_t n = x.size();
  double c0 = 0.0;
  for (double v : x) c0 += (v - m) * (v - m);
  std::vector<double> out(max_lag + 1, 0.0);
  if (c0 == 0.0) {
    out[0] = 1.0;
    return out;
  }
  for (std::size_t k = 0; k <= max_lag; ++k) {
    double ck = 0.0;
    for (std::size_t t = 0; t + k < n; ++t) ck += (x[t] - m) * (x[t + k] - m);
    out[k] = ck / c0;
  }
  return out;
}

inline double rmse(std::span<const double> draws, double truth) {
  double ss = 0.0;
  for (double v : draws) ss += (v - truth) * (v - truth);
  return std::sqrt(ss / static_cast<double>(draws.size()));
}

struct DensityGrid {
  std::vector<double> x;
  std::vector<double> density;
  double bandwidth = 0.0;
};

// Gaussian kernel density estimate with Silverman's rule-of-thumb bandwidth.
inline DensityGrid kde(std::span<const double> draws, std::size_t points = 512) {
  if (draws.size() < 2) throw Error("kde: need at least two draws");
  std::vector<double> v(draws.begin(), draws.end());
  const double s = sd(v);
  const double iqr = quantile(v, 0.75) - quantile(v, 0.25);
  double spread = std::min(s, iqr / 1.34);
  if (!(spread > 0.0)) spread = s > 0.0 ? s : 1.0;
  const double bw = 0.9 * spread * std::pow(static_cast<double>(v.size()), -0.2);
  const auto [mn, mx] = std::minmax_element(v.begin(), v.end());
  const double lo = *mn - 3.0 * bw, hi = *mx + 3.0 * bw;
  DensityGrid g;
  g.bandwidth = bw;
  g.x.resize(points);
  g.density.assign(points, 0.0);
  const double norm = 1.0 / (static_cast<double>(v.size()) * bw * std::sqrt(2.0 * std::numbers::pi));
  for (std::size_t k = 0; k < points; ++k) {
    const double at = lo + (hi - lo) * static_cast<double>(k) / static_cast<double>(points - 1);
    g.x[k] = at;
    double acc = 0.0;
    for (double d : v) {
      const double u = (at - d) / bw;
      acc += std::exp(-0.5 * u * u);
    }
    g.density[k] = acc * norm;
  }
  return g;
}

struct KsResult {
  double statistic = 0.0;
  double p_value = 1.0;
};

// Two-sample Kolmogorov-Smirnov test, asymptotic p-value with the
// Stephens small-sample correction.
inline KsResult ks_two_sample(std::vector<double> a, std::vector<double> b) {
  if (a.empty() || b.empty()) throw Error("ks_two_sample: empty sample");
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  const double na = static_cast<double>(a.size()), nb = static_cast<double>(b.size());
  std::size_t i = 0, j = 0;
  double d = 0.0;
  while (i < a.size() && j < b.size()) {
    const double v = std::min(a[i], b[j]);
    while (i < a.size() && a[i] == v) ++i;
    while (j < b.size() && b[j] == v) ++j;
    d = std::max(d, std::abs(static_cast<double>(i) / na - static_cast<double>(j) / nb));
  }
  const double ne = std::sqrt(na * nb / (na + nb));
  const double lambda = (ne + 0.12 + 0.11 / ne) * d;
  double p = 0.0;
  if (lambda < 1e-3) {
    p = 1.0;
  } else {
    for (int k = 1; k <= 200; ++k) {
      const double term = 2.0 * ((k % 2) ? 1.0 : -1.0) * std::exp(-2.0 * k * k * lambda * lambda);
      p += term;
      if (std::abs(term) < 1e-12) break;
    }
    p = std::clamp(p, 0.0, 1.0);
  }
  return {d, p};
}

// Every k-th element starting from index k-1.
inline std::vector<double> thin(std::span<const double> x, std::size_t k) {
  std::vector<double> out;
  for (std::size_t i = k - 1; i < x.size(); i += k) out.push_back(x[i]);
  return out;
}

}  // namespace ivbart::diag
