#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <map>
#include <mutex>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "ivbart/baselines.hpp"
#include "ivbart/core.hpp"
#include "ivbart/data.hpp"
#include "ivbart/diagnostics.hpp"
#include "ivbart/dpm.hpp"
#include "ivbart/sampler.hpp"

namespace ivbart::sim {

enum class FunctionalForm { nonlinear, linear };

struct ScenarioSpec {
  std::size_t n = 500;
  FunctionalForm form = FunctionalForm::nonlinear;
  double beta_true = 1.0;
  int p_x = 10;
  int p_z = 5;
  double sigma_t = 1.0;
  double gamma = 1.0 / std::sqrt(2.0);
  double sigma_y = 1.0 / std::sqrt(2.0);
  double nu_t = 5.0;
  double covariate_lo = -2.0;
  double covariate_hi = 2.0;
  int replications = 10;
  std::uint64_t master_seed = 20190901;

  void validate() const {
    if (n < 10) throw Error("scenario needs n >= 10");
    if (replications < 1) throw Error("scenario needs at least one replication");
    if (p_x < 4 || p_z < 2) throw Error("scenario functions need p_x >= 4 and p_z >= 2");
  }
};

inline const char* form_name(FunctionalForm f) { return f == FunctionalForm::nonlinear ? "nonlinear" : "linear"; }

inline FunctionalForm parse_form(const std::string& s) {
  if (s == "nonlinear") return FunctionalForm::nonlinear;
  if (s == "linear") return FunctionalForm::linear;
  throw Error("unknown scenario '" + s + "' (expected nonlinear or linear)");
}

// Row-wise first- and second-stage functions; x and z are 0-indexed.
template <class Row>
double true_f(FunctionalForm form, const Row& x, const Row& z) {
  if (form == FunctionalForm::nonlinear)
    return x(0) + 0.5 * x(0) * x(1) + 0.5 * x(1) * x(1) + z(0) + z(1) * x(0) + 0.5 * z(1) * z(1);
  return x(0) + x(1) + x(2) + z(0) + z(1);
}

template <class Row>
double true_h(FunctionalForm form, const Row& x) {
  if (form == FunctionalForm::nonlinear) return x(0) - 0.25 * x(0) * x(1) * x(1) * x(1) + x(2);
  return x(0) - x(1) + 0.5 * x(3);
}

struct Truth {
  Eigen::VectorXd f;
  Eigen::VectorXd h;
  Eigen::VectorXd eps_t;
  Eigen::VectorXd eps_y;
  double beta = 1.0;
};

struct Simulated {
  Dataset data;
  Truth truth;
};

// T = f(x, z) + sigma_T Z_T, Y = beta T + h(x) + gamma Z_T + sigma_Y Z_Y
// with Z_T, Z_Y independent t_nu and x, z iid uniform.
inline Simulated gen_scenario(const ScenarioSpec& spec, Random& rng) {
  spec.validate();
  const auto n = static_cast<Eigen::Index>(spec.n);
  Simulated s;
  auto& d = s.data;
  d.x.resize(n, spec.p_x);
  d.z.resize(n, spec.p_z);
  d.t.resize(n);
  d.y.resize(n);
  s.truth.f.resize(n);
  s.truth.h.resize(n);
  s.truth.eps_t.resize(n);
  s.truth.eps_y.resize(n);
  s.truth.beta = spec.beta_true;
  for (Eigen::Index i = 0; i < n; ++i) {
    for (int j = 0; j < spec.p_x; ++j) d.x(i, j) = rng.uniform(spec.covariate_lo, spec.covariate_hi);
    for (int j = 0; j < spec.p_z; ++j) d.z(i, j) = rng.uniform(spec.covariate_lo, spec.covariate_hi);
    const double zt = rng.student_t(spec.nu_t);
    const double zy = rng.student_t(spec.nu_t);
    const Eigen::VectorXd xr = d.x.row(i).transpose();
    const Eigen::VectorXd zr = d.z.row(i).transpose();
    const double f = true_f(spec.form, xr, zr);
    const double h = true_h(spec.form, xr);
    const double et = spec.sigma_t * zt;
    const double ey = spec.gamma * zt + spec.sigma_y * zy;
    d.t(i) = f + et;
    d.y(i) = spec.beta_true * d.t(i) + h + ey;
    s.truth.f(i) = f;
    s.truth.h(i) = h;
    s.truth.eps_t(i) = et;
    s.truth.eps_y(i) = ey;
  }
  d.y_name = "y";
  d.t_name = "t";
  for (int j = 0; j < spec.p_x; ++j) d.x_names.push_back("x" + std::to_string(j + 1));
  for (int j = 0; j < spec.p_z; ++j) d.z_names.push_back("z" + std::to_string(j + 1));
  return s;
}

enum class Model { ivbart = 0, linear_normal = 1, linear_dpm = 2 };

inline const char* model_name(Model m) {
  switch (m) {
    case Model::ivbart: return "ivbart";
    case Model::linear_normal: return "linear-normal";
    case Model::linear_dpm: return "linear-dpm";
  }
  return "?";
}

inline Model parse_model(const std::string& s) {
  if (s == "ivbart") return Model::ivbart;
  if (s == "linear-normal") return Model::linear_normal;
  if (s == "linear-dpm") return Model::linear_dpm;
  throw Error("unknown model '" + s + "' (expected ivbart, linear-normal or linear-dpm)");
}

// Everything a chain needs besides the data; controls.seed is replaced by
// a derived seed wherever the harness launches chains.
struct ModelSettings {
  Priors priors;
  baselines::LinearPrior linear;
  Controls controls;
};

// Standardizes `raw`, solves the DPM prior for its size and runs `model`.
inline std::vector<DrawRecord> run_model(Model model, const Dataset& raw, const ModelSettings& settings,
                                         std::uint64_t seed) {
  auto [data, moments] = standardize(raw);
  Priors priors = settings.priors;
  priors.dpm = dpm::solve_prior(priors.dpm, data.n());
  Controls controls = settings.controls;
  controls.seed = seed;
  switch (model) {
    case Model::ivbart: return run_chain(data, moments, priors, controls);
    case Model::linear_normal: return baselines::run_linear_normal(data, moments, settings.linear, controls);
    case Model::linear_dpm:
      return baselines::run_linear_dpm(data, moments, settings.linear, priors.dpm, controls);
  }
  throw Error("unknown model");
}

inline std::vector<double> betas(const std::vector<DrawRecord>& draws) {
  std::vector<double> b;
  b.reserve(draws.size());
  for (const auto& d : draws) b.push_back(d.beta);
  return b;
}

// Runs body(k) for k in [0, count) on up to `jobs` threads. The first
// failure is rethrown after all workers stop.
template <class Body>
void parallel_for(std::size_t count, int jobs, Body&& body) {
  const std::size_t workers = std::max<std::size_t>(1, std::min<std::size_t>(static_cast<std::size_t>(std::max(jobs, 1)), count));
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex mu;
  auto work = [&] {
    for (std::size_t k = next++; k < count; k = next++) {
      try {
        body(k);
      } catch (...) {
        std::lock_guard lock(mu);
        if (!failure) failure = std::current_exception();
        next = count;
      }
    }
  };
  if (workers == 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work);
    for (auto& t : pool) t.join();
  }
  if (failure) std::rethrow_exception(failure);
}

struct ModelResult {
  Model model = Model::ivbart;
  double rmse = 0.0;
  double relative_rmse = 0.0;
  std::vector<diag::Interval> intervals;  // one per replication
  std::vector<double> pooled;             // all retained beta draws
  diag::Interval pooled_interval;
  diag::DensityGrid density;
};

struct MetricReport {
  ScenarioSpec spec;
  std::vector<ModelResult> models;
};

inline std::uint64_t dataset_seed(std::uint64_t master, std::size_t rep) { return derive_seed(master, {rep, 0}); }
inline std::uint64_t chain_seed(std::uint64_t master, std::size_t rep, Model m) {
  return derive_seed(master, {rep, 1 + static_cast<std::uint64_t>(m)});
}

// Sets each model's relative RMSE to its RMSE over the minimum.
inline void relativize(std::vector<ModelResult>& models) {
  double best = std::numeric_limits<double>::infinity();
  for (const auto& m : models) best = std::min(best, m.rmse);
  for (auto& m : models) m.relative_rmse = m.rmse == best ? 1.0 : m.rmse / best;
}

// Fresh dataset per replication, one chain per model, draws pooled across
// replications; RMSE is over all pooled draws.
inline MetricReport run_study(const ScenarioSpec& spec, const std::vector<Model>& models,
                              const ModelSettings& settings, int jobs = 1) {
  spec.validate();
  if (models.empty()) throw Error("run_study: no models requested");
  const auto reps = static_cast<std::size_t>(spec.replications);
  std::vector<std::vector<std::vector<double>>> per_rep(reps, std::vector<std::vector<double>>(models.size()));

  parallel_for(reps, jobs, [&](std::size_t r) {
    try {
      Random data_rng(dataset_seed(spec.master_seed, r));
      const auto sim = gen_scenario(spec, data_rng);
      for (std::size_t m = 0; m < models.size(); ++m)
        per_rep[r][m] = betas(run_model(models[m], sim.data, settings, chain_seed(spec.master_seed, r, models[m])));
    } catch (const std::exception& e) {
      throw Error("replication " + std::to_string(r) + " failed: " + e.what());
    }
  });

  MetricReport report;
  report.spec = spec;
  for (std::size_t m = 0; m < models.size(); ++m) {
    ModelResult res;
    res.model = models[m];
    for (std::size_t r = 0; r < reps; ++r) {
      const auto& b = per_rep[r][m];
      res.pooled.insert(res.pooled.end(), b.begin(), b.end());
      res.intervals.push_back(b.size() >= diag::kMinIntervalDraws ? diag::interval_summary(b)
                                                                  : diag::Interval{});
    }
    res.rmse = diag::rmse(res.pooled, spec.beta_true);
    if (res.pooled.size() >= diag::kMinIntervalDraws) res.pooled_interval = diag::interval_summary(res.pooled);
    if (res.pooled.size() >= 2) res.density = diag::kde(res.pooled);
    report.models.push_back(std::move(res));
  }
  relativize(report.models);
  return report;
}

inline std::uint64_t grid_seed(std::uint64_t master, std::size_t index) { return derive_seed(master, {index}); }

using SensitivityResult = std::map<std::pair<double, double>, std::vector<DrawRecord>>;

// One IVBART chain per (sigma_f, sigma_h) pair over sigma_values^2, on
// shared data; grid point k (row-major over sigma_f then sigma_h) uses
// grid_seed(master, k).
inline SensitivityResult sensitivity_grid(const Dataset& raw, const std::vector<double>& sigma_values,
                                          const ModelSettings& settings, std::uint64_t master_seed,
                                          int jobs = 1) {
  if (sigma_values.empty()) throw Error("sensitivity_grid: empty sigma grid");
  std::vector<std::pair<double, double>> points;
  for (double sf : sigma_values)
    for (double sh : sigma_values) points.emplace_back(sf, sh);

  std::vector<std::vector<DrawRecord>> out(points.size());
  parallel_for(points.size(), jobs, [&](std::size_t k) {
    ModelSettings s = settings;
    s.priors.function.sigma_f = points[k].first;
    s.priors.function.sigma_h = points[k].second;
    out[k] = run_model(Model::ivbart, raw, s, grid_seed(master_seed, k));
  });
  SensitivityResult result;
  for (std::size_t k = 0; k < points.size(); ++k) result.emplace(points[k], std::move(out[k]));
  return result;
}

}  // namespace ivbart::sim
