#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <vector>

#include "ivbart/core.hpp"
#include "ivbart/data.hpp"
#include "ivbart/dpm.hpp"
#include "ivbart/sampler.hpp"

namespace ivbart::baselines {

// Priors for the linear comparison models (standardized scale).
struct LinearPrior {
  double coef_variance = 100.0;
  double sigma_df = 5.0;
  Eigen::Matrix2d sigma_scale = Eigen::Matrix2d::Identity();
};

enum class ErrorModel { normal, dpm };

// T - t_offset = first_stage * pi + eps_T
// Y            = [T controls] * phi + eps_Y      (phi(0) is beta)
struct LinearDesign {
  Eigen::VectorXd t;
  Eigen::VectorXd y;
  Eigen::MatrixXd first_stage;
  Eigen::MatrixXd controls;
  Eigen::VectorXd t_offset;  // empty means zero
};

struct LinearIvState {
  double beta_s = 0.0;
  Eigen::VectorXd first_stage_coefs;
  Eigen::VectorXd second_stage_coefs;  // includes beta_s in slot 0
  Eigen::Matrix2d sigma = Eigen::Matrix2d::Identity();
  dpm::DpmState dpm;
};

// Posterior mean and sd of every structural coefficient over kept draws
// (standardized scale).
struct CoefSummary {
  Eigen::VectorXd first_mean, first_sd;
  Eigen::VectorXd second_mean, second_sd;
};

struct LinearChain {
  std::vector<DrawRecord> draws;
  LinearIvState final_state;
  CoefSummary coefs;
};

namespace detail {

inline Eigen::MatrixXd with_intercept(const Eigen::MatrixXd& m, Eigen::Index n, bool intercept) {
  Eigen::MatrixXd out(n, m.cols() + (intercept ? 1 : 0));
  if (intercept) {
    out.col(0).setOnes();
    if (m.cols() > 0) out.rightCols(m.cols()) = m;
  } else {
    out = m;
  }
  return out;
}

inline void require_full_rank(const Eigen::MatrixXd& m, const char* what) {
  if (m.cols() == 0) return;
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(m);
  if (qr.rank() < m.cols()) {
    throw Error(std::string("rank-deficient ") + what + " design: rank " + std::to_string(qr.rank()) +
                " < " + std::to_string(m.cols()) + " columns");
  }
}

// Draws b from its posterior under resp_i = x_i' b + N(0, 1 / prec_i) and b ~ N(0, v I).
inline Eigen::VectorXd draw_regression(const Eigen::MatrixXd& x, const Eigen::VectorXd& resp,
                                       const Eigen::VectorXd& prec, double prior_var, Random& rng) {
  const Eigen::Index p = x.cols();
  Eigen::MatrixXd a = x.transpose() * prec.asDiagonal() * x;
  a.diagonal().array() += 1.0 / prior_var;
  const Eigen::VectorXd rhs = x.transpose() * (prec.array() * resp.array()).matrix();
  const Eigen::LLT<Eigen::MatrixXd> llt(a);
  if (llt.info() != Eigen::Success) throw Error("linear baseline: posterior precision not positive definite");
  const Eigen::VectorXd mean = llt.solve(rhs);
  Eigen::VectorXd z(p);
  for (Eigen::Index k = 0; k < p; ++k) z(k) = rng.normal();
  // a = L L'; b = mean + L'^-1 z has covariance a^-1.
  return mean + llt.matrixU().solve(z);
}

}  // namespace detail

// Generic linear-IV Gibbs sampler: (pi | phi, errors), (phi | pi, errors),
// then the error law (Sigma for normal errors, one DPM sweep otherwise).
inline LinearChain run_linear_iv(const LinearDesign& d, const LinearPrior& prior, ErrorModel model,
                                 const DpmPrior& dpm_prior, const Standardization& moments,
                                 const Controls& controls, const dpm::SweepOptions& dpm_opt = {}) {
  controls.validate();
  const Eigen::Index n = d.t.size();
  if (d.y.size() != n || d.first_stage.rows() != n || d.controls.rows() != n)
    throw Error("linear design: inconsistent row counts");
  if (model == ErrorModel::dpm && !dpm_prior.solved()) throw Error("linear-DPM: DPM prior is not solved");

  Eigen::MatrixXd xy(n, 1 + d.controls.cols());
  xy.col(0) = d.t;
  if (d.controls.cols() > 0) xy.rightCols(d.controls.cols()) = d.controls;
  detail::require_full_rank(d.first_stage, "first-stage");
  detail::require_full_rank(xy, "second-stage");

  const Eigen::VectorXd t_adj = d.t_offset.size() == n ? Eigen::VectorXd(d.t - d.t_offset) : d.t;

  Random rng(controls.seed);
  LinearIvState st;
  st.first_stage_coefs = Eigen::VectorXd::Zero(d.first_stage.cols());
  st.second_stage_coefs = Eigen::VectorXd::Zero(xy.cols());
  st.dpm = dpm::DpmState::single(static_cast<std::size_t>(n), dpm::ThetaAtom{},
                                 0.5 * (dpm_prior.alpha_min + dpm_prior.alpha_max));

  Eigen::VectorXd resp(n), prec(n), e_t(n), e_y(n);
  std::vector<DrawRecord> draws;
  draws.reserve(static_cast<std::size_t>(controls.keep));
  Eigen::VectorXd s1 = Eigen::VectorXd::Zero(d.first_stage.cols()), q1 = s1;
  Eigen::VectorXd s2 = Eigen::VectorXd::Zero(xy.cols()), q2 = s2;

  auto atom = [&](Eigen::Index i) -> dpm::ThetaAtom {
    if (model == ErrorModel::dpm) return st.dpm.atom_of(static_cast<std::size_t>(i));
    return dpm::ThetaAtom::from_moments(dpm::Vec2::Zero(), st.sigma);
  };

  const long total = controls.total_sweeps();
  for (long it = 1; it <= total; ++it) {
    // pi | phi: eps_T | eps_Y is normal with mean mu_T + (S12/S22)(eps_Y - mu_Y).
    e_y = d.y - xy * st.second_stage_coefs;
    for (Eigen::Index i = 0; i < n; ++i) {
      const auto th = atom(i);
      const auto s = th.covariance();
      const double c = s(0, 1) / s(1, 1);
      resp(i) = t_adj(i) - th.mu(0) - c * (e_y(i) - th.mu(1));
      prec(i) = 1.0 / (s(0, 0) - c * s(0, 1));
    }
    st.first_stage_coefs = detail::draw_regression(d.first_stage, resp, prec, prior.coef_variance, rng);

    // phi | pi: eps_Y | eps_T has mean mu_Y + gamma Z_T and sd sigma_Y.
    e_t = t_adj - d.first_stage * st.first_stage_coefs;
    for (Eigen::Index i = 0; i < n; ++i) {
      const auto th = atom(i);
      const double zt = (e_t(i) - th.mu(0)) / th.sigma_t;
      resp(i) = d.y(i) - th.mu(1) - th.gamma * zt;
      prec(i) = 1.0 / (th.sigma_y * th.sigma_y);
    }
    st.second_stage_coefs = detail::draw_regression(xy, resp, prec, prior.coef_variance, rng);
    st.beta_s = st.second_stage_coefs(0);

    e_y = d.y - xy * st.second_stage_coefs;
    if (model == ErrorModel::normal) {
      Eigen::MatrixX2d e(n, 2);
      e.col(0) = e_t;
      e.col(1) = e_y;
      const Eigen::Matrix2d scale = prior.sigma_scale + e.transpose() * e;
      st.sigma = dpm::draw_inverse_wishart(prior.sigma_df + static_cast<double>(n), scale, rng);
    } else {
      Eigen::MatrixX2d e(n, 2);
      e.col(0) = e_t;
      e.col(1) = e_y;
      dpm::dpm_sweep(st.dpm, e, dpm_prior, rng, dpm_opt);
    }

    if (it > controls.burn && (it - controls.burn) % controls.thin == 0) {
      DrawRecord rec;
      rec.iteration = it;
      rec.beta = rescale_beta(st.beta_s, moments);
      rec.cluster_count = model == ErrorModel::dpm ? static_cast<int>(st.dpm.num_clusters()) : 1;
      if (!std::isfinite(rec.beta)) throw Error("linear baseline: non-finite beta at sweep " + std::to_string(it));
      draws.push_back(rec);
      s1 += st.first_stage_coefs;
      q1 += st.first_stage_coefs.cwiseAbs2();
      s2 += st.second_stage_coefs;
      q2 += st.second_stage_coefs.cwiseAbs2();
    }
  }
  CoefSummary cs;
  if (!draws.empty()) {
    const double k = static_cast<double>(draws.size());
    auto sd = [k](const Eigen::VectorXd& s, const Eigen::VectorXd& q) -> Eigen::VectorXd {
      return ((q / k - (s / k).cwiseAbs2()).cwiseMax(0.0) * (k / std::max(k - 1.0, 1.0))).cwiseSqrt();
    };
    cs = {s1 / k, sd(s1, q1), s2 / k, sd(s2, q2)};
  }
  return {std::move(draws), std::move(st), std::move(cs)};
}

// Structural designs for a standardized dataset. The normal model carries
// intercepts; under DPM errors the atom means play that role.
inline LinearDesign make_design(const Dataset& data, bool intercepts) {
  const auto n = static_cast<Eigen::Index>(data.n());
  Eigen::MatrixXd zx(n, data.z.cols() + data.x.cols());
  zx << data.z, data.x;
  LinearDesign d;
  d.t = data.t;
  d.y = data.y;
  d.first_stage = detail::with_intercept(zx, n, intercepts);
  d.controls = detail::with_intercept(data.x, n, intercepts);
  return d;
}

inline std::vector<DrawRecord> run_linear_normal(const Dataset& data, const Standardization& moments,
                                                 const LinearPrior& prior, const Controls& controls) {
  return run_linear_iv(make_design(data, true), prior, ErrorModel::normal, DpmPrior{}, moments, controls).draws;
}

inline std::vector<DrawRecord> run_linear_dpm(const Dataset& data, const Standardization& moments,
                                              const LinearPrior& prior, const DpmPrior& dpm_prior,
                                              const Controls& controls,
                                              const dpm::SweepOptions& dpm_opt = {}) {
  return run_linear_iv(make_design(data, false), prior, ErrorModel::dpm, dpm_prior, moments, controls,
                       dpm_opt)
      .draws;
}

// Two-stage least squares point estimate of beta in original units, with
// instruments [1 z x] and regressors [1 T x].
inline double tsls_beta(const Dataset& raw) {
  const auto n = static_cast<Eigen::Index>(raw.n());
  Eigen::MatrixXd zx(n, raw.z.cols() + raw.x.cols());
  zx << raw.z, raw.x;
  const Eigen::MatrixXd inst = detail::with_intercept(zx, n, true);
  Eigen::MatrixXd reg(n, 2 + raw.x.cols());
  reg.col(0).setOnes();
  reg.col(1) = raw.t;
  if (raw.x.cols() > 0) reg.rightCols(raw.x.cols()) = raw.x;
  detail::require_full_rank(inst, "instrument");
  const Eigen::MatrixXd fitted = inst * inst.colPivHouseholderQr().solve(reg);
  const Eigen::VectorXd coef = (fitted.transpose() * reg).colPivHouseholderQr().solve(fitted.transpose() * raw.y);
  return coef(1);
}

}  // namespace ivbart::baselines
