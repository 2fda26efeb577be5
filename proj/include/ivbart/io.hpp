#pragma once

#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "ivbart/baselines.hpp"
#include "ivbart/core.hpp"
#include "ivbart/data.hpp"
#include "ivbart/diagnostics.hpp"
#include "ivbart/sampler.hpp"
#include "ivbart/simlab.hpp"

namespace ivbart::io {

using nlohmann::json;

// Shortest round-trip representation.
inline std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::ofstream open_out(const std::filesystem::path& p) {
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  std::ofstream out(p);
  if (!out) throw Error("cannot write '" + p.string() + "'");
  return out;
}

inline void write_draws_csv(const std::filesystem::path& p, const std::vector<DrawRecord>& draws) {
  auto out = open_out(p);
  out << "iteration,beta,cluster_count\n";
  for (const auto& d : draws) out << d.iteration << ',' << fmt(d.beta) << ',' << d.cluster_count << '\n';
}

inline std::vector<DrawRecord> read_draws_csv(const std::filesystem::path& p) {
  std::ifstream in(p);
  if (!in) throw Error("cannot read '" + p.string() + "'");
  std::string line;
  std::getline(in, line);
  if (line != "iteration,beta,cluster_count") throw Error("unexpected draws header in '" + p.string() + "'");
  std::vector<DrawRecord> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ss(line);
    std::string a, b, c;
    std::getline(ss, a, ',');
    std::getline(ss, b, ',');
    std::getline(ss, c, ',');
    DrawRecord d;
    d.iteration = std::stol(a);
    d.beta = std::stod(b);
    d.cluster_count = std::stoi(c);
    out.push_back(d);
  }
  return out;
}

struct Summary {
  std::size_t draws = 0;
  double mean = 0.0;
  double sd = 0.0;
  double q025 = 0.0;
  double q975 = 0.0;
};

inline Summary summarize(const std::vector<double>& beta) {
  Summary s;
  s.draws = beta.size();
  if (beta.empty()) return s;
  s.mean = diag::mean(beta);
  s.sd = beta.size() > 1 ? diag::sd(beta) : 0.0;
  s.q025 = diag::quantile(beta, 0.025);
  s.q975 = diag::quantile(beta, 0.975);
  return s;
}

inline void write_summary_csv(const std::filesystem::path& p,
                              const std::vector<std::pair<std::string, Summary>>& rows) {
  auto out = open_out(p);
  out << "model,draws,mean,sd,q025,q975\n";
  for (const auto& [name, s] : rows)
    out << name << ',' << s.draws << ',' << fmt(s.mean) << ',' << fmt(s.sd) << ',' << fmt(s.q025) << ','
        << fmt(s.q975) << '\n';
}

inline json to_json(const Priors& p) {
  const auto& f = p.function;
  const auto& d = p.dpm;
  return {
      {"beta", {{"beta_bar", p.beta.beta_bar}, {"a_beta", p.beta.a_beta}}},
      {"function",
       {{"sigma_f", f.sigma_f},
        {"sigma_h", f.sigma_h},
        {"num_trees_f", f.num_trees_f},
        {"num_trees_h", f.num_trees_h},
        {"tree_depth_base", f.tree_depth_base},
        {"tree_depth_power", f.tree_depth_power},
        {"num_cutpoints", f.num_cutpoints},
        {"moves", "grow/prune, probability 0.5 each"}}},
      {"dpm",
       {{"c1", d.c1},
        {"c2", d.c2},
        {"c3", d.c3},
        {"kappa", d.kappa},
        {"a", d.a},
        {"nu", d.nu},
        {"v", d.v},
        {"i_min", d.i_min},
        {"i_max", d.i_max},
        {"psi", d.psi},
        {"alpha_min", d.alpha_min},
        {"alpha_max", d.alpha_max},
        {"alpha_update", "100-point uniform grid over [alpha_min, alpha_max]"},
        {"alpha_bounds_method", "bisection on prior mode of I; midpoint of the alpha interval with that mode"}}},
  };
}

inline json to_json(const baselines::LinearPrior& p) {
  return {{"coef_variance", p.coef_variance},
          {"sigma_df", p.sigma_df},
          {"sigma_scale", {p.sigma_scale(0, 0), p.sigma_scale(0, 1), p.sigma_scale(1, 0), p.sigma_scale(1, 1)}}};
}

inline json to_json(const Controls& c) {
  return {{"burn", c.burn}, {"keep", c.keep}, {"thin", c.thin}, {"seed", c.seed}};
}

inline json to_json(const Standardization& s) {
  return {{"t_mean", s.t_mean}, {"t_sd", s.t_sd}, {"y_mean", s.y_mean}, {"y_sd", s.y_sd}};
}

inline json to_json(const ColumnRoles& r) { return {{"y", r.y}, {"t", r.t}, {"x", r.x}, {"z", r.z}}; }

inline json to_json(const sim::ScenarioSpec& s) {
  return {{"n", s.n},
          {"scenario", sim::form_name(s.form)},
          {"beta_true", s.beta_true},
          {"p_x", s.p_x},
          {"p_z", s.p_z},
          {"sigma_t", s.sigma_t},
          {"gamma", s.gamma},
          {"sigma_y", s.sigma_y},
          {"nu_t", s.nu_t},
          {"covariate_law", "iid uniform(" + fmt(s.covariate_lo) + ", " + fmt(s.covariate_hi) + ")"},
          {"replications", s.replications},
          {"master_seed", s.master_seed}};
}

inline void write_json(const std::filesystem::path& p, const json& j) {
  auto out = open_out(p);
  out << j.dump(2) << '\n';
}

inline void write_metrics_csv(const std::filesystem::path& p, const sim::MetricReport& r) {
  auto out = open_out(p);
  out << "scenario,n,model,rmse,relative_rmse\n";
  for (const auto& m : r.models)
    out << sim::form_name(r.spec.form) << ',' << r.spec.n << ',' << sim::model_name(m.model) << ','
        << fmt(m.rmse) << ',' << fmt(m.relative_rmse) << '\n';
}

inline void write_intervals_csv(const std::filesystem::path& p, const sim::MetricReport& r) {
  auto out = open_out(p);
  out << "model,replication,lo,hi\n";
  for (const auto& m : r.models) {
    for (std::size_t k = 0; k < m.intervals.size(); ++k)
      out << sim::model_name(m.model) << ',' << k << ',' << fmt(m.intervals[k].lo) << ','
          << fmt(m.intervals[k].hi) << '\n';
    out << sim::model_name(m.model) << ",pooled," << fmt(m.pooled_interval.lo) << ','
        << fmt(m.pooled_interval.hi) << '\n';
  }
}

inline void write_density_csv(const std::filesystem::path& p, const diag::DensityGrid& g) {
  auto out = open_out(p);
  out << "x,density\n";
  for (std::size_t k = 0; k < g.x.size(); ++k) out << fmt(g.x[k]) << ',' << fmt(g.density[k]) << '\n';
}

}  // namespace ivbart::io
