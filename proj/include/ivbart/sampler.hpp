#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <optional>
#include <vector>

#include "ivbart/bart.hpp"
#include "ivbart/core.hpp"
#include "ivbart/data.hpp"
#include "ivbart/dpm.hpp"

namespace ivbart {

struct Priors {
  BetaPrior beta;
  FunctionPrior function;
  DpmPrior dpm;
};

struct Controls {
  int burn = 1000;
  int keep = 2500;
  int thin = 1;
  std::uint64_t seed = 1;
  bool store_fits = false;

  void validate() const {
    if (burn < 0 || keep < 0 || thin < 1) throw Error("controls need burn >= 0, keep >= 0, thin >= 1");
  }
  long total_sweeps() const { return static_cast<long>(burn) + static_cast<long>(keep) * thin; }
};

struct DrawRecord {
  long iteration = 0;
  double beta = 0.0;  // original units
  int cluster_count = 0;
  Eigen::VectorXd f_fit;  // standardized scale, only with store_fits
  Eigen::VectorXd h_fit;
};

inline constexpr double kGammaFloor = 1e-6;

// One full configuration of the IVBART sampler (standardized scale).
struct GibbsState {
  double beta_s = 0.0;
  bart::Forest forest_f;  // over [z x]
  bart::Forest forest_h;  // over x
  dpm::DpmState dpm;
  long iteration = 0;

  // When set, the corresponding block is skipped and these values stand in
  // for the forest fits.
  std::optional<Eigen::VectorXd> frozen_f;
  std::optional<Eigen::VectorXd> frozen_h;

  const Eigen::VectorXd& f_values() const { return frozen_f ? *frozen_f : forest_f.fits(); }
  const Eigen::VectorXd& h_values() const { return frozen_h ? *frozen_h : forest_h.fits(); }
};

inline Eigen::MatrixXd f_covariates(const Dataset& data) {
  Eigen::MatrixXd zx(static_cast<Eigen::Index>(data.n()), data.z.cols() + data.x.cols());
  zx << data.z, data.x;
  return zx;
}

// Starting point: beta_s = 0, zero forests, one cluster at (0, I), alpha at
// the middle of its bounds.
inline GibbsState init_state(const Dataset& data, const Priors& priors) {
  GibbsState s{0.0,
               bart::forest_init(f_covariates(data), priors.function, bart::FunctionRole::f),
               bart::forest_init(data.x.cols() > 0 ? data.x : Eigen::MatrixXd(data.n(), 0),
                                 priors.function, bart::FunctionRole::h),
               dpm::DpmState::single(data.n(), dpm::ThetaAtom{},
                                     0.5 * (priors.dpm.alpha_min + priors.dpm.alpha_max)),
               0,
               std::nullopt,
               std::nullopt};
  return s;
}

// Z_T = (T - mu_T - f) / sigma_T.
inline Eigen::VectorXd compute_zt(const GibbsState& state, const Dataset& data) {
  const auto& f = state.f_values();
  Eigen::VectorXd zt(static_cast<Eigen::Index>(data.n()));
  for (std::size_t i = 0; i < data.n(); ++i) {
    const auto& th = state.dpm.atom_of(i);
    const auto k = static_cast<Eigen::Index>(i);
    zt(k) = (data.t(k) - th.mu(0) - f(k)) / th.sigma_t;
  }
  return zt;
}

struct NormalPosterior {
  double mean = 0.0;
  double variance = 0.0;
};

// V_i = beta W_i + N(0, 1) with beta ~ N(beta_bar, 1 / a_beta).
inline NormalPosterior beta_conditional(const Eigen::VectorXd& v, const Eigen::VectorXd& w,
                                        const BetaPrior& prior) {
  const double var = 1.0 / (prior.a_beta + w.squaredNorm());
  return {var * (prior.a_beta * prior.beta_bar + w.dot(v)), var};
}

inline std::pair<Eigen::VectorXd, Eigen::VectorXd> beta_regression(const GibbsState& state,
                                                                   const Dataset& data,
                                                                   const Eigen::VectorXd& zt) {
  const auto& h = state.h_values();
  Eigen::VectorXd v(static_cast<Eigen::Index>(data.n())), w(static_cast<Eigen::Index>(data.n()));
  for (std::size_t i = 0; i < data.n(); ++i) {
    const auto& th = state.dpm.atom_of(i);
    const auto k = static_cast<Eigen::Index>(i);
    v(k) = (data.y(k) - th.mu(1) - h(k) - th.gamma * zt(k)) / th.sigma_y;
    w(k) = data.t(k) / th.sigma_y;
  }
  return {std::move(v), std::move(w)};
}

inline double draw_beta(const GibbsState& state, const Dataset& data, const BetaPrior& prior,
                        Random& rng) {
  const auto [v, w] = beta_regression(state, data, compute_zt(state, data));
  const auto post = beta_conditional(v, w, prior);
  return rng.normal(post.mean, std::sqrt(post.variance));
}

// resp = Y - mu_Y - beta T - gamma Z_T with error sd sigma_Y.
inline bart::HeteroTarget h_target(const GibbsState& state, const Dataset& data) {
  const auto zt = compute_zt(state, data);
  bart::HeteroTarget tg;
  tg.resp.resize(static_cast<Eigen::Index>(data.n()));
  tg.w.resize(static_cast<Eigen::Index>(data.n()));
  for (std::size_t i = 0; i < data.n(); ++i) {
    const auto& th = state.dpm.atom_of(i);
    const auto k = static_cast<Eigen::Index>(i);
    tg.resp(k) = data.y(k) - th.mu(1) - state.beta_s * data.t(k) - th.gamma * zt(k);
    tg.w(k) = th.sigma_y;
  }
  return tg;
}

inline void draw_h(GibbsState& state, const Dataset& data, Random& rng) {
  if (state.frozen_h) return;
  bart::forest_sweep(state.forest_h, h_target(state, data), rng);
}

// The two independent pseudo-observations of f per row:
//   T - mu_T             = f + sigma_T Z_T
//   R / gamma            = f - (sigma_T sigma_Y / gamma) Z_Y
// with R = (beta sigma_T + gamma)(T - mu_T) - sigma_T (Y - mu_Y - h - beta mu_T).
// The second one is omitted when |gamma| < kGammaFloor.
inline bart::HeteroTarget f_target(const GibbsState& state, const Dataset& data) {
  const auto& h = state.h_values();
  const double beta = state.beta_s;
  std::vector<double> resp, w;
  std::vector<std::size_t> rows;
  resp.reserve(2 * data.n());
  w.reserve(2 * data.n());
  rows.reserve(2 * data.n());
  for (std::size_t i = 0; i < data.n(); ++i) {
    const auto& th = state.dpm.atom_of(i);
    const auto k = static_cast<Eigen::Index>(i);
    resp.push_back(data.t(k) - th.mu(0));
    w.push_back(th.sigma_t);
    rows.push_back(i);
  }
  for (std::size_t i = 0; i < data.n(); ++i) {
    const auto& th = state.dpm.atom_of(i);
    if (std::abs(th.gamma) < kGammaFloor) continue;
    const auto k = static_cast<Eigen::Index>(i);
    const double r = (beta * th.sigma_t + th.gamma) * (data.t(k) - th.mu(0)) -
                     th.sigma_t * (data.y(k) - th.mu(1) - h(k) - beta * th.mu(0));
    resp.push_back(r / th.gamma);
    w.push_back(th.sigma_t * th.sigma_y / std::abs(th.gamma));
    rows.push_back(i);
  }
  bart::HeteroTarget tg;
  tg.resp = Eigen::Map<Eigen::VectorXd>(resp.data(), static_cast<Eigen::Index>(resp.size()));
  tg.w = Eigen::Map<Eigen::VectorXd>(w.data(), static_cast<Eigen::Index>(w.size()));
  tg.rows = std::move(rows);
  return tg;
}

inline void draw_f(GibbsState& state, const Dataset& data, Random& rng) {
  if (state.frozen_f) return;
  bart::forest_sweep(state.forest_f, f_target(state, data), rng);
}

// Rows (T - f, Y - beta T - h).
inline Eigen::MatrixX2d theta_residuals(const GibbsState& state, const Dataset& data) {
  const auto& f = state.f_values();
  const auto& h = state.h_values();
  Eigen::MatrixX2d r(static_cast<Eigen::Index>(data.n()), 2);
  r.col(0) = data.t - f;
  r.col(1) = data.y - state.beta_s * data.t - h;
  return r;
}

inline void draw_theta(GibbsState& state, const Dataset& data, const DpmPrior& prior, Random& rng,
                       const dpm::SweepOptions& opt = {}) {
  dpm::dpm_sweep(state.dpm, theta_residuals(state, data), prior, rng, opt);
}

struct ChainOptions {
  std::optional<Eigen::VectorXd> frozen_f;
  std::optional<Eigen::VectorXd> frozen_h;
  bool single_cluster = false;
  bool check_invariants = false;
};

// Runs burn + keep * thin sweeps in block order f, h, beta, theta and keeps
// every thin-th post-burn draw. `data` must already be standardized and the
// DPM prior solved.
inline std::vector<DrawRecord> run_chain(const Dataset& data, const Standardization& std_moments,
                                         const Priors& priors, const Controls& controls,
                                         const ChainOptions& options = {}) {
  data.validate();
  controls.validate();
  priors.beta.validate();
  priors.function.validate();
  if (!priors.dpm.solved()) throw Error("run_chain: DPM prior is not solved");

  Random rng(controls.seed);
  GibbsState state = init_state(data, priors);
  state.frozen_f = options.frozen_f;
  state.frozen_h = options.frozen_h;
  dpm::SweepOptions sweep_opt;
  if (options.single_cluster) sweep_opt.resample_assignments = false;

  std::vector<DrawRecord> draws;
  draws.reserve(static_cast<std::size_t>(controls.keep));
  const long total = controls.total_sweeps();
  for (long it = 1; it <= total; ++it) {
    draw_f(state, data, rng);
    draw_h(state, data, rng);
    state.beta_s = draw_beta(state, data, priors.beta, rng);
    draw_theta(state, data, priors.dpm, rng, sweep_opt);
    state.iteration = it;

    if (options.check_invariants) {
      state.dpm.check(priors.dpm.alpha_min, priors.dpm.alpha_max);
      for (const auto* forest : {&state.forest_f, &state.forest_h})
        if ((forest->recompute_fits() - forest->fits()).cwiseAbs().maxCoeff() > 1e-9)
          throw Error("run_chain: forest cache drifted");
    }

    if (it > controls.burn && (it - controls.burn) % controls.thin == 0) {
      DrawRecord rec;
      rec.iteration = it;
      rec.beta = rescale_beta(state.beta_s, std_moments);
      rec.cluster_count = static_cast<int>(state.dpm.num_clusters());
      if (!std::isfinite(rec.beta)) throw Error("run_chain: non-finite beta at sweep " + std::to_string(it));
      if (controls.store_fits) {
        rec.f_fit = state.f_values();
        rec.h_fit = state.h_values();
      }
      draws.push_back(std::move(rec));
    }
  }
  return draws;
}

// Standardizes raw data, solves the DPM prior for its size and runs one chain.
inline std::vector<DrawRecord> fit_ivbart(const Dataset& raw, Priors priors, const Controls& controls,
                                          Standardization* moments = nullptr,
                                          Priors* solved = nullptr) {
  auto [data, s] = standardize(raw);
  priors.dpm = dpm::solve_prior(priors.dpm, data.n());
  if (moments) *moments = s;
  if (solved) *solved = priors;
  return run_chain(data, s, priors, controls);
}

}  // namespace ivbart
