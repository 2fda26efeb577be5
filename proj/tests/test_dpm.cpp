#include <gtest/gtest.h>

#include <algorithm>
#include <map>
#include <numeric>

#include "ivbart/dpm.hpp"

using namespace ivbart;
using namespace ivbart::dpm;

namespace {

// Composite Simpson on [lo, hi] with an even number of panels.
template <class F>
double simpson(F&& f, double lo, double hi, int panels = 200000) {
  const double h = (hi - lo) / panels;
  double s = f(lo) + f(hi);
  for (int k = 1; k < panels; ++k) s += f(lo + k * h) * (k % 2 ? 4.0 : 2.0);
  return s * h / 3.0;
}

// P(X < q) for X ~ chi2_k, integrated in u = sqrt(x) to tame the origin.
double chi2_cdf(double q, double k) {
  const double log_c = -0.5 * k * std::log(2.0) - std::lgamma(0.5 * k);
  auto g = [&](double u) {
    if (u <= 0.0) return k > 1.0 ? 0.0 : (k == 1.0 ? 2.0 * std::exp(log_c) : 0.0);
    const double x = u * u;
    return 2.0 * u * std::exp(log_c + (0.5 * k - 1.0) * std::log(x) - 0.5 * x);
  };
  return simpson(g, 0.0, std::sqrt(q));
}

// P(|t_k| < q).
double t_central(double q, double k) {
  const double log_c = std::lgamma(0.5 * (k + 1)) - std::lgamma(0.5 * k) - 0.5 * std::log(k * std::numbers::pi);
  auto g = [&](double x) { return std::exp(log_c - 0.5 * (k + 1) * std::log1p(x * x / k)); };
  return 2.0 * simpson(g, 0.0, q);
}

DpmPrior solved_prior(std::size_t n) { return solve_prior(DpmPrior{}, n); }

// pmf of the number of clusters as a sum of independent Bernoulli(alpha / (alpha + i)).
std::vector<double> cluster_pmf_bernoulli(double alpha, std::size_t n) {
  std::vector<double> p{1.0};
  for (std::size_t i = 0; i < n; ++i) {
    const double q = alpha / (alpha + static_cast<double>(i));
    std::vector<double> next(p.size() + 1, 0.0);
    for (std::size_t k = 0; k < p.size(); ++k) {
      next[k] += p[k] * (1.0 - q);
      next[k + 1] += p[k] * q;
    }
    p.swap(next);
  }
  return p;
}

std::size_t argmax(const std::vector<double>& v) {
  return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

Eigen::MatrixX2d two_blobs(int n, double center, Random& rng) {
  Eigen::MatrixX2d r(n, 2);
  for (int i = 0; i < n; ++i) {
    const double c = i % 2 ? center : -center;
    r(i, 0) = c + rng.normal();
    r(i, 1) = c + rng.normal();
  }
  return r;
}

int modal_count(const std::vector<int>& counts) {
  std::map<int, int> tally;
  for (int c : counts) ++tally[c];
  return std::max_element(tally.begin(), tally.end(), [](auto& a, auto& b) { return a.second < b.second; })->first;
}

}  // namespace

TEST(SolveG0, DefaultCalibrationMatchesPublishedValues) {
  const auto g = solve_g0(0.25, 3.25, 10.0, 0.2);
  EXPECT_NEAR(g.a, 0.016, 0.0005);
  EXPECT_NEAR(g.nu, 2.0, 0.05);
  EXPECT_NEAR(g.v, 0.17, 0.005);
}

TEST(SolveG0, QuantileRoundTripByQuadrature) {
  const double c1 = 0.25, c2 = 3.25, c3 = 10.0, kappa = 0.2;
  const auto g = solve_g0(c1, c2, c3, kappa);
  const double df = g.nu - 1.0;
  // sigma1 < c  <=>  chi2 > v / c^2
  EXPECT_NEAR(1.0 - chi2_cdf(g.v / (c1 * c1), df), kappa / 2, 1e-4);
  EXPECT_NEAR(chi2_cdf(g.v / (c2 * c2), df), kappa / 2, 1e-4);
  const double scale = std::sqrt(g.v / (g.a * df));
  EXPECT_NEAR(t_central(c3 / scale, df), 1.0 - kappa, 1e-4);
}

TEST(SolveG0, OtherCalibrationRoundTrip) {
  const double c1 = 0.5, c2 = 2.0, c3 = 3.0, kappa = 0.1;
  const auto g = solve_g0(c1, c2, c3, kappa);
  const double df = g.nu - 1.0;
  EXPECT_NEAR(1.0 - chi2_cdf(g.v / (c1 * c1), df), kappa / 2, 1e-4);
  EXPECT_NEAR(chi2_cdf(g.v / (c2 * c2), df), kappa / 2, 1e-4);
  EXPECT_NEAR(t_central(c3 / std::sqrt(g.v / (g.a * df)), df), 1.0 - kappa, 1e-4);
}

TEST(SolveG0, WiderTailMassLowersNu) {
  // The same (c1, c2) range holding only 50% central mass needs fewer
  // degrees of freedom than holding 80%.
  const auto narrow = solve_g0(0.25, 3.25, 10.0, 0.2);
  const auto wide = solve_g0(0.25, 3.25, 10.0, 0.5);
  EXPECT_LT(wide.nu, narrow.nu);
  EXPECT_GT(wide.nu, kMinNu);
}

TEST(SolveG0, BracketFailureReported) {
  try {
    solve_g0(1.0, 1.0001, 1.0, 0.2);
    FAIL() << "expected a bracket error";
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("bracket"), std::string::npos);
  }
  EXPECT_THROW(solve_g0(2.0, 1.0, 1.0, 0.2), Error);
  EXPECT_THROW(solve_g0(0.2, 1.0, 1.0, 1.5), Error);
}

TEST(Stirling, SmallTable) {
  const auto ls = log_stirling_first(4);
  const double expect[] = {0, 6, 11, 6, 1};
  EXPECT_EQ(ls[0], -std::numeric_limits<double>::infinity());
  for (int k = 1; k <= 4; ++k) EXPECT_NEAR(std::exp(ls[k]), expect[k], 1e-10);
}

TEST(Stirling, PriorMatchesBernoulliConstruction) {
  const auto ls = log_stirling_first(60);
  for (double alpha : {0.3, 1.0, 4.5, 20.0}) {
    const auto p = cluster_count_prior(alpha, ls);
    const auto q = cluster_pmf_bernoulli(alpha, 60);
    for (std::size_t k = 0; k <= 60; ++k) EXPECT_NEAR(p[k], q[k], 1e-10) << alpha << " " << k;
  }
}

TEST(AlphaBounds, TwoObservations) {
  const auto b = solve_alpha_bounds(2, 1, 2);
  EXPECT_NEAR(b.alpha_min, 0.5, 1e-9);
  EXPECT_GT(b.alpha_max, 1.0);
  const auto ls = log_stirling_first(2);
  EXPECT_EQ(cluster_count_mode(b.alpha_min, ls), 1);
  EXPECT_EQ(cluster_count_mode(b.alpha_max, ls), 2);
}

TEST(AlphaBounds, DefaultBoundsForFiveHundred) {
  const auto b = solve_alpha_bounds(500, 2, 51);
  EXPECT_LT(b.alpha_min, b.alpha_max);
  EXPECT_EQ(argmax(cluster_pmf_bernoulli(b.alpha_min, 500)), 2u);
  EXPECT_EQ(argmax(cluster_pmf_bernoulli(b.alpha_max, 500)), 51u);
}

TEST(AlphaBounds, MidpointOfModeInterval) {
  // n = 3: |s(3, .)| = (2, 3, 1); mode 2 holds for 2/3 < alpha < 3.
  const auto b = solve_alpha_bounds(3, 2, 3);
  EXPECT_NEAR(b.alpha_min, 0.5 * (2.0 / 3.0 + 3.0), 1e-9);
}

TEST(AlphaBounds, UnreachableModeReported) {
  // mode n needs alpha > n(n-1)/2 which exceeds the 1e6 ceiling at n = 2000
  try {
    solve_alpha_bounds(2000, 2, 2000);
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("not reachable"), std::string::npos);
  }
  EXPECT_THROW(solve_alpha_bounds(10, 5, 3), Error);
  EXPECT_THROW(solve_alpha_bounds(10, 2, 11), Error);
}

TEST(AlphaPrior, DensityExamples) {
  EXPECT_DOUBLE_EQ(alpha_prior_density(0.2, 0.2, 5.0, 0.5), 1.0);
  EXPECT_DOUBLE_EQ(alpha_prior_density(5.0, 0.2, 5.0, 0.5), 0.0);
  EXPECT_NEAR(alpha_prior_density(2.6, 0.2, 5.0, 0.5), std::sqrt(0.5), 1e-12);
  EXPECT_EQ(alpha_prior_density(0.1, 0.2, 5.0, 0.5), 0.0);
  EXPECT_EQ(alpha_prior_density(5.1, 0.2, 5.0, 0.5), 0.0);
}

TEST(AlphaPrior, GridPosteriorIsPriorWhenLikelihoodFlat) {
  const auto prior = solved_prior(500);
  const auto g = alpha_grid_posterior(1, 1, prior);
  ASSERT_EQ(g.alpha.size(), 100u);
  const double d0 = alpha_prior_density(g.alpha[0], prior.alpha_min, prior.alpha_max, prior.psi);
  for (std::size_t k = 0; k < g.alpha.size(); ++k) {
    const double d = alpha_prior_density(g.alpha[k], prior.alpha_min, prior.alpha_max, prior.psi);
    EXPECT_NEAR(g.prob[k] / g.prob[0], d / d0, 1e-10);
  }
  EXPECT_NEAR(std::accumulate(g.prob.begin(), g.prob.end(), 0.0), 1.0, 1e-12);
}

TEST(SolvePrior, DefaultsFilled) {
  const auto p = solved_prior(500);
  EXPECT_TRUE(p.solved());
  EXPECT_EQ(p.i_max, 51);
  EXPECT_EQ(p.i_min, 2);
}

TEST(Niw, PosteriorMatchesIndependentUpdate) {
  Random rng(3);
  const auto prior = solved_prior(100);
  const NiwParams g0 = base_measure(prior);
  Eigen::MatrixX2d y(40, 2);
  SuffStats st;
  for (int i = 0; i < 40; ++i) {
    y(i, 0) = 1.0 + 0.7 * rng.normal();
    y(i, 1) = -2.0 + 0.4 * y(i, 0) + 0.3 * rng.normal();
    st.add(y.row(i).transpose());
  }
  const auto post = niw_posterior(g0, st);

  // raw-moment form: scale_n = scale_0 + sum y y' + k0 m0 m0' - kn mn mn'
  const double kn = prior.a + 40;
  const Vec2 mn = y.colwise().sum().transpose() / kn;
  const Mat2 sn = prior.v * Mat2::Identity() + y.transpose() * y - kn * mn * mn.transpose();
  EXPECT_NEAR(post.kappa, kn, 1e-12);
  EXPECT_NEAR(post.nu, prior.nu + 40, 1e-12);
  EXPECT_LT((post.mean - mn).cwiseAbs().maxCoeff(), 1e-8);
  EXPECT_LT((post.scale - sn).cwiseAbs().maxCoeff(), 1e-8);

  SuffStats empty;
  const auto same = niw_posterior(g0, empty);
  EXPECT_EQ(same.scale, g0.scale);
}

TEST(Niw, ForcedSingleClusterSweepDrawsFromConjugatePosterior) {
  Random rng(17);
  const auto prior = solved_prior(50);
  Eigen::MatrixX2d y(50, 2);
  for (int i = 0; i < 50; ++i) {
    y(i, 0) = 0.5 + rng.normal();
    y(i, 1) = 0.8 * y(i, 0) + 0.5 * rng.normal();
  }
  const double kn = prior.a + 50, nun = prior.nu + 50;
  const Vec2 mn = y.colwise().sum().transpose() / kn;
  const Mat2 sn = prior.v * Mat2::Identity() + y.transpose() * y - kn * mn * mn.transpose();
  const Mat2 expected_sigma = sn / (nun - 3.0);

  auto state = DpmState::single(50, ThetaAtom{}, prior.alpha_min);
  SweepOptions opt{false, false};
  const int draws = 20000;
  Vec2 mu_sum = Vec2::Zero();
  Mat2 sigma_sum = Mat2::Zero();
  for (int k = 0; k < draws; ++k) {
    dpm_sweep(state, y, prior, rng, opt);
    ASSERT_EQ(state.num_clusters(), 1u);
    mu_sum += state.atoms[0].mu;
    sigma_sum += state.atoms[0].covariance();
  }
  const Mat2 sigma_mean = sigma_sum / draws;
  EXPECT_LT((mu_sum / draws - mn).cwiseAbs().maxCoeff(), 0.01);
  EXPECT_LT(((sigma_mean - expected_sigma).array() / expected_sigma.array().abs()).abs().maxCoeff(), 0.03);
}

TEST(Predictive, IntegratesToOne) {
  const auto prior = solved_prior(100);
  SuffStats st;
  Random rng(2);
  for (int i = 0; i < 30; ++i) st.add(Vec2(rng.normal(), 0.5 * rng.normal()));
  const Predictive pred(niw_posterior(base_measure(prior), st));
  double total = 0.0;
  const double h = 0.02;
  for (double a = -12; a < 12; a += h)
    for (double b = -12; b < 12; b += h) total += std::exp(pred.log_density(Vec2(a, b))) * h * h;
  EXPECT_NEAR(total, 1.0, 2e-3);
}

TEST(SampleG0, PrecisionMeanMatchesWishartMoment) {
  const auto prior = solved_prior(500);
  Random rng(99);
  const int draws = 100000;
  Mat2 s = Mat2::Zero(), ss = Mat2::Zero();
  for (int k = 0; k < draws; ++k) {
    const Mat2 p = sample_g0(prior, rng).covariance().inverse();
    s += p;
    ss += p.cwiseAbs2();
  }
  const Mat2 mean = s / draws;
  const Mat2 se = ((ss / draws - mean.cwiseAbs2()) / draws).cwiseSqrt();
  const Mat2 expect = (prior.nu / prior.v) * Mat2::Identity();
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j) EXPECT_LT(std::abs(mean(i, j) - expect(i, j)), 3.0 * se(i, j)) << i << j;
}

TEST(SampleG0, Sigma11QuantilesMatchScaledInverseChiSquare) {
  const auto prior = solved_prior(500);
  Random rng(123);
  std::vector<double> s11(100000);
  for (auto& v : s11) v = sample_g0(prior, rng).covariance()(0, 0);
  std::sort(s11.begin(), s11.end());
  const boost::math::chi_squared chi(prior.nu - 1.0);
  for (double p : {0.1, 0.5, 0.9}) {
    const double want = prior.v / boost::math::quantile(chi, 1.0 - p);
    const double got = s11[static_cast<std::size_t>(p * s11.size())];
    EXPECT_NEAR(got / want, 1.0, 0.05) << p;
  }
}

TEST(SampleG0, LargePrecisionConcentratesMean) {
  auto prior = solved_prior(500);
  prior.a = 1e12;
  Random rng(4);
  for (int k = 0; k < 1000; ++k) EXPECT_LT(sample_g0(prior, rng).mu.cwiseAbs().maxCoeff(), 1e-3);
}

TEST(SampleG0, RequiresSolvedPrior) {
  Random rng(1);
  EXPECT_THROW(sample_g0(DpmPrior{}, rng), Error);
}

TEST(ThetaAtom, CholeskyRoundTrip) {
  Mat2 s;
  s << 2.0, 0.6, 0.6, 1.5;
  const auto a = ThetaAtom::from_moments(Vec2(1, 2), s);
  EXPECT_LT((a.covariance() - s).cwiseAbs().maxCoeff(), 1e-14);
  EXPECT_GT(a.sigma_t, 0);
  EXPECT_GT(a.sigma_y, 0);
  EXPECT_NEAR(a.correlation(), 0.6 / std::sqrt(3.0), 1e-14);
}

TEST(DpmSweep, IdenticalRowsStaySmall) {
  auto prior = solved_prior(3);
  const auto b = solve_alpha_bounds(3, 2, 3);
  prior.alpha_min = b.alpha_min;
  prior.alpha_max = b.alpha_max;
  Eigen::MatrixX2d y(3, 2);
  y.rowwise() = Eigen::RowVector2d(0.3, -0.2);
  auto state = DpmState::single(3, ThetaAtom{}, prior.alpha_min);
  Random rng(6);
  std::vector<int> counts;
  for (int k = 0; k < 4000; ++k) {
    dpm_sweep(state, y, prior, rng, {true, false});
    if (k >= 200) counts.push_back(static_cast<int>(state.num_clusters()));
  }
  EXPECT_LE(modal_count(counts), 2);
}

TEST(DpmSweep, SeparatedBlobsRecovered) {
  Random rng(8);
  const auto y = two_blobs(200, 5.0, rng);
  const auto prior = solved_prior(200);
  auto state = DpmState::single(200, ThetaAtom{}, 0.5 * (prior.alpha_min + prior.alpha_max));
  std::vector<int> counts;
  for (int k = 0; k < 300; ++k) {
    dpm_sweep(state, y, prior, rng);
    state.check(prior.alpha_min, prior.alpha_max);
    if (k >= 50) counts.push_back(static_cast<int>(state.num_clusters()));
  }
  EXPECT_GE(modal_count(counts), 2);
}

TEST(DpmSweep, SingleGaussianGivesFewClusters) {
  Random rng(10);
  Eigen::MatrixX2d y(300, 2);
  for (int i = 0; i < 300; ++i) {
    const double a = rng.normal(), b = rng.normal();
    y(i, 0) = a;
    y(i, 1) = 0.7 * a + 0.7 * b;
  }
  const auto prior = solved_prior(300);
  auto state = DpmState::single(300, ThetaAtom{}, prior.alpha_min);
  std::vector<int> counts;
  for (int k = 0; k < 400; ++k) {
    dpm_sweep(state, y, prior, rng);
    if (k >= 100) counts.push_back(static_cast<int>(state.num_clusters()));
  }
  EXPECT_LE(modal_count(counts), 3);
}

TEST(DpmSweep, InvariantsHoldEverySweep) {
  Random rng(12);
  Eigen::MatrixX2d y(80, 2);
  for (int i = 0; i < 80; ++i) {
    y(i, 0) = rng.student_t(2.0);
    y(i, 1) = rng.student_t(2.0) + (i % 3);
  }
  const auto prior = solved_prior(80);
  auto state = DpmState::single(80, ThetaAtom{}, prior.alpha_max);
  for (int k = 0; k < 300; ++k) {
    dpm_sweep(state, y, prior, rng);
    ASSERT_NO_THROW(state.check(prior.alpha_min, prior.alpha_max));
    for (const auto& a : state.atoms) {
      ASSERT_GT(a.sigma_t, 0.0);
      ASSERT_GT(a.sigma_y, 0.0);
      ASSERT_TRUE(a.mu.allFinite());
    }
  }
}

TEST(DpmSweep, RowMismatchRejected) {
  const auto prior = solved_prior(10);
  auto state = DpmState::single(10, ThetaAtom{}, prior.alpha_min);
  Random rng(1);
  EXPECT_THROW(dpm_sweep(state, Eigen::MatrixX2d::Zero(9, 2), prior, rng), Error);
}

TEST(DpmSweep, PermutationLeavesClusterCountDistribution) {
  Random data_rng(14);
  const int n = 60;
  Eigen::MatrixX2d y(n, 2);
  for (int i = 0; i < n; ++i) {
    const double c = (i % 3) * 3.0;
    y(i, 0) = c + 0.6 * data_rng.normal();
    y(i, 1) = -c + 0.6 * data_rng.normal();
  }
  std::vector<int> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), data_rng.engine());
  Eigen::MatrixX2d yp(n, 2);
  for (int i = 0; i < n; ++i) yp.row(i) = y.row(perm[i]);

  const auto prior = solved_prior(n);
  auto run = [&](const Eigen::MatrixX2d& data, std::uint64_t seed) {
    Random rng(seed);
    auto state = DpmState::single(n, ThetaAtom{}, prior.alpha_min);
    double s = 0.0;
    for (int k = 0; k < 150; ++k) {
      dpm_sweep(state, data, prior, rng);
      if (k >= 50) s += static_cast<double>(state.num_clusters()) / 100.0;
    }
    return s;
  };
  std::vector<double> a, b;
  for (int r = 0; r < 20; ++r) {
    a.push_back(run(y, derive_seed(1, {static_cast<std::uint64_t>(r)})));
    b.push_back(run(yp, derive_seed(2, {static_cast<std::uint64_t>(r)})));
  }
  auto mean_var = [](const std::vector<double>& v) {
    const double m = std::accumulate(v.begin(), v.end(), 0.0) / v.size();
    double ss = 0.0;
    for (double x : v) ss += (x - m) * (x - m);
    return std::pair{m, ss / (v.size() - 1)};
  };
  const auto [ma, va] = mean_var(a);
  const auto [mb, vb] = mean_var(b);
  EXPECT_LT(std::abs(ma - mb), 3.0 * std::sqrt((va + vb) / 20.0) + 0.25) << ma << " vs " << mb;
}

TEST(Wishart, NonIntegerDegreesOfFreedomMean) {
  Random rng(5);
  Mat2 scale;
  scale << 2.0, 0.3, 0.3, 1.0;
  const double nu = 7.5;
  Mat2 s = Mat2::Zero();
  const int draws = 50000;
  for (int k = 0; k < draws; ++k) s += draw_inverse_wishart(nu, scale, rng);
  const Mat2 expect = scale / (nu - 3.0);
  EXPECT_LT(((s / draws - expect).array() / expect.array().abs()).abs().maxCoeff(), 0.03);
}
