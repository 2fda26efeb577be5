#pragma once

#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "ivbart/ivbart.hpp"

namespace ivbart::cli {

struct RunConfig {
  std::string command;
  std::string model = "ivbart";
  std::string data_path;
  ColumnRoles roles;
  Priors priors;
  baselines::LinearPrior linear;
  Controls controls;
  std::optional<std::uint64_t> seed;
  std::string out_dir = "ivbart_out";
  int jobs = 1;

  // simulate / sensitivity
  std::string scenario = "nonlinear";
  std::size_t n = 500;
  int reps = 10;
  bool full = false;
  std::vector<std::string> models{"ivbart", "linear-normal", "linear-dpm"};
  std::vector<double> sigmas{0.8, 1.0, 1.2, 1.4};
};

inline std::uint64_t resolve_seed(const RunConfig& cfg) {
  if (cfg.seed) return *cfg.seed;
  if (const char* env = std::getenv("IVBART_SEED"); env && *env) {
    try {
      return std::stoull(env);
    } catch (const std::exception&) {
      throw CLI::ValidationError("IVBART_SEED", std::string("not an unsigned integer: ") + env);
    }
  }
  return 1;
}

namespace detail {

inline void add_prior_flags(CLI::App& app, RunConfig& cfg) {
  auto& f = cfg.priors.function;
  auto& d = cfg.priors.dpm;
  app.add_option("--sigmaf", f.sigma_f, "prior sd of f")->check(CLI::PositiveNumber);
  app.add_option("--sigmah", f.sigma_h, "prior sd of h")->check(CLI::PositiveNumber);
  app.add_option("--ntrees", f.num_trees_f, "trees per ensemble")->check(CLI::PositiveNumber)->each([&](const std::string& s) {
    f.num_trees_h = std::stoi(s);
  });
  app.add_option("--beta-bar", cfg.priors.beta.beta_bar, "prior mean of standardized beta");
  app.add_option("--a-beta", cfg.priors.beta.a_beta, "prior precision of standardized beta")->check(CLI::PositiveNumber);
  app.add_option("--c1", d.c1, "lower sigma quantile for G0")->check(CLI::PositiveNumber);
  app.add_option("--c2", d.c2, "upper sigma quantile for G0")->check(CLI::PositiveNumber);
  app.add_option("--c3", d.c3, "mean half-range for G0")->check(CLI::PositiveNumber);
  app.add_option("--kappa", d.kappa, "tail mass for G0 calibration")->check(CLI::Range(0.0, 1.0));
  app.add_option("--imin", d.i_min, "minimum number of mixture components")->check(CLI::Range(1, 1 << 30));
  app.add_option("--imax", d.i_max, "maximum number of mixture components (default [0.1 n] + 1)")
      ->check(CLI::Range(1, 1 << 30));
  app.add_option("--psi", d.psi, "shape of the alpha prior")->check(CLI::PositiveNumber);
}

inline void add_control_flags(CLI::App& app, RunConfig& cfg) {
  app.add_option("--burn", cfg.controls.burn, "burn-in sweeps")->check(CLI::NonNegativeNumber);
  app.add_option("--keep", cfg.controls.keep, "retained draws")->check(CLI::NonNegativeNumber);
  app.add_option("--thin", cfg.controls.thin, "sweeps per retained draw")->check(CLI::PositiveNumber);
  app.add_option("--seed", cfg.seed, "RNG seed (falls back to IVBART_SEED)");
  app.add_option("--out", cfg.out_dir, "output directory");
  app.add_option("--jobs", cfg.jobs, "worker threads")->check(CLI::PositiveNumber);
}

inline void add_data_flags(CLI::App& app, RunConfig& cfg, bool required) {
  auto* data = app.add_option("--data", cfg.data_path, "CSV file with a header row")->check(CLI::ExistingFile);
  auto* y = app.add_option("--y", cfg.roles.y, "outcome column");
  auto* t = app.add_option("--t", cfg.roles.t, "treatment column");
  auto* z = app.add_option("--z", cfg.roles.z, "instrument columns")->delimiter(',');
  app.add_option("--x", cfg.roles.x, "confounder columns")->delimiter(',');
  if (required) {
    data->required();
    y->required();
    t->required();
    z->required();
  }
}

inline std::string tag(double v) {
  std::ostringstream ss;
  ss << v;
  return ss.str();
}

inline Dataset load(const RunConfig& cfg) { return load_csv(cfg.data_path, cfg.roles); }

inline nlohmann::json base_meta(const RunConfig& cfg, const Priors& solved) {
  nlohmann::json meta;
  meta["software"] = {{"name", "ivbart"}, {"version", kVersion}};
  meta["command"] = cfg.command;
  meta["priors"] = io::to_json(solved);
  meta["linear_prior"] = io::to_json(cfg.linear);
  meta["controls"] = io::to_json(cfg.controls);
  meta["jobs"] = cfg.jobs;
  return meta;
}

inline int do_fit(RunConfig cfg) {
  const auto model = sim::parse_model(cfg.model);
  const Dataset raw = load(cfg);
  auto [data, moments] = standardize(raw);
  Priors priors = cfg.priors;
  priors.dpm = dpm::solve_prior(priors.dpm, data.n());

  std::vector<DrawRecord> draws;
  switch (model) {
    case sim::Model::ivbart: draws = run_chain(data, moments, priors, cfg.controls); break;
    case sim::Model::linear_normal:
      draws = baselines::run_linear_normal(data, moments, cfg.linear, cfg.controls);
      break;
    case sim::Model::linear_dpm:
      draws = baselines::run_linear_dpm(data, moments, cfg.linear, priors.dpm, cfg.controls);
      break;
  }

  const std::filesystem::path out(cfg.out_dir);
  io::write_draws_csv(out / "draws.csv", draws);
  io::write_summary_csv(out / "summary.csv", {{cfg.model, io::summarize(sim::betas(draws))}});
  auto meta = base_meta(cfg, priors);
  meta["model"] = cfg.model;
  meta["data"] = {{"path", cfg.data_path}, {"n", raw.n()}, {"roles", io::to_json(cfg.roles)}};
  meta["standardization"] = io::to_json(moments);
  meta["tsls_beta"] = baselines::tsls_beta(raw);
  io::write_json(out / "meta.json", meta);

  const auto s = io::summarize(sim::betas(draws));
  std::cout << cfg.model << ": beta mean " << s.mean << ", sd " << s.sd << ", 95% interval [" << s.q025 << ", "
            << s.q975 << "]\n";
  return 0;
}

inline int do_simulate(RunConfig cfg) {
  sim::ScenarioSpec spec;
  spec.form = sim::parse_form(cfg.scenario);
  spec.n = cfg.n;
  spec.replications = cfg.full ? 90 : cfg.reps;
  spec.master_seed = cfg.controls.seed;
  std::vector<sim::Model> models;
  for (const auto& m : cfg.models) models.push_back(sim::parse_model(m));

  sim::ModelSettings settings{cfg.priors, cfg.linear, cfg.controls};
  const auto report = sim::run_study(spec, models, settings, cfg.jobs);

  const std::filesystem::path out(cfg.out_dir);
  io::write_metrics_csv(out / "metrics.csv", report);
  io::write_intervals_csv(out / "intervals.csv", report);
  std::vector<std::pair<std::string, io::Summary>> rows;
  for (const auto& m : report.models) {
    io::write_density_csv(out / ("density_" + std::string(sim::model_name(m.model)) + ".csv"), m.density);
    rows.emplace_back(sim::model_name(m.model), io::summarize(m.pooled));
  }
  io::write_summary_csv(out / "summary.csv", rows);

  Priors shown = cfg.priors;
  shown.dpm = dpm::solve_prior(shown.dpm, spec.n);
  auto meta = base_meta(cfg, shown);
  meta["scenario"] = io::to_json(spec);
  meta["models"] = cfg.models;
  meta["seed_scheme"] = "splitmix64 derivation: dataset (master, rep, 0), chain (master, rep, 1 + model id)";
  io::write_json(out / "meta.json", meta);

  for (const auto& m : report.models)
    std::cout << sim::model_name(m.model) << ": rmse " << m.rmse << ", relative " << m.relative_rmse << '\n';
  return 0;
}

inline int do_sensitivity(RunConfig cfg) {
  Dataset raw;
  nlohmann::json data_meta;
  if (!cfg.data_path.empty()) {
    if (cfg.roles.y.empty() || cfg.roles.t.empty() || cfg.roles.z.empty())
      throw CLI::RequiredError("--y, --t and --z are required with --data");
    raw = load(cfg);
    data_meta = {{"path", cfg.data_path}, {"n", raw.n()}, {"roles", io::to_json(cfg.roles)}};
  } else {
    sim::ScenarioSpec spec;
    spec.form = sim::parse_form(cfg.scenario);
    spec.n = cfg.n;
    spec.master_seed = cfg.controls.seed;
    Random rng(sim::dataset_seed(spec.master_seed, 0));
    raw = sim::gen_scenario(spec, rng).data;
    data_meta = {{"simulated", io::to_json(spec)}};
  }

  sim::ModelSettings settings{cfg.priors, cfg.linear, cfg.controls};
  const auto grid = sim::sensitivity_grid(raw, cfg.sigmas, settings, cfg.controls.seed, cfg.jobs);

  const std::filesystem::path out(cfg.out_dir);
  std::vector<std::pair<std::string, io::Summary>> rows;
  for (const auto& [key, draws] : grid) {
    const std::string name = "sf" + tag(key.first) + "_sh" + tag(key.second);
    io::write_draws_csv(out / ("draws_" + name + ".csv"), draws);
    const auto b = sim::betas(draws);
    if (b.size() >= 2) io::write_density_csv(out / ("density_" + name + ".csv"), diag::kde(b));
    rows.emplace_back("ivbart_" + name, io::summarize(b));
  }
  io::write_summary_csv(out / "summary.csv", rows);

  Priors shown = cfg.priors;
  shown.dpm = dpm::solve_prior(shown.dpm, raw.n());
  auto meta = base_meta(cfg, shown);
  meta["data"] = data_meta;
  meta["sigmas"] = cfg.sigmas;
  meta["seed_scheme"] = "grid point k (sigma_f-major) uses splitmix64 derivation (master, k)";
  io::write_json(out / "meta.json", meta);
  for (const auto& [name, s] : rows) std::cout << name << ": beta mean " << s.mean << ", sd " << s.sd << '\n';
  return 0;
}

}  // namespace detail

// Exit codes: 0 success, 2 configuration error, 1 runtime failure.
inline int cli_main(int argc, char** argv) {
  CLI::App app{"Bayesian instrumental variables with tree-ensemble stages and DPM errors", "ivbart"};
  app.require_subcommand(1, 1);
  RunConfig cfg;

  auto* fit = app.add_subcommand("fit", "fit one model to a CSV dataset");
  fit->add_option("--model", cfg.model, "ivbart | linear-normal | linear-dpm")
      ->check(CLI::IsMember({"ivbart", "linear-normal", "linear-dpm"}));
  detail::add_data_flags(*fit, cfg, true);
  detail::add_prior_flags(*fit, cfg);
  detail::add_control_flags(*fit, cfg);

  auto* simulate = app.add_subcommand("simulate", "replicated simulation study");
  simulate->add_option("--scenario", cfg.scenario, "nonlinear | linear")->check(CLI::IsMember({"nonlinear", "linear"}));
  simulate->add_option("--n", cfg.n, "sample size")->check(CLI::Range(10, 1 << 30));
  simulate->add_option("--reps", cfg.reps, "replications")->check(CLI::PositiveNumber);
  simulate->add_flag("--full", cfg.full, "run the full 90-replication study");
  simulate->add_option("--models", cfg.models, "comma-separated model list")
      ->delimiter(',')
      ->check(CLI::IsMember({"ivbart", "linear-normal", "linear-dpm"}));
  detail::add_prior_flags(*simulate, cfg);
  detail::add_control_flags(*simulate, cfg);

  auto* sens = app.add_subcommand("sensitivity", "IVBART over a (sigma_f, sigma_h) grid");
  detail::add_data_flags(*sens, cfg, false);
  sens->add_option("--scenario", cfg.scenario, "simulate data when --data is absent")
      ->check(CLI::IsMember({"nonlinear", "linear"}));
  sens->add_option("--n", cfg.n, "simulated sample size")->check(CLI::Range(10, 1 << 30));
  sens->add_option("--sigmas", cfg.sigmas, "comma-separated sigma values")->delimiter(',')->check(CLI::PositiveNumber);
  detail::add_prior_flags(*sens, cfg);
  detail::add_control_flags(*sens, cfg);

  try {
    app.parse(argc, argv);
    cfg.command = app.get_subcommands().front()->get_name();
    cfg.controls.seed = resolve_seed(cfg);
    cfg.priors.beta.validate();
    cfg.priors.function.validate();
    cfg.priors.dpm.validate_calibration();
    cfg.controls.validate();
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "ivbart: " << e.what() << '\n';
    return 2;
  } catch (const Error& e) {
    std::cerr << "ivbart: configuration error: " << e.what() << '\n';
    return 2;
  }

  try {
    if (cfg.command == "fit") return detail::do_fit(cfg);
    if (cfg.command == "simulate") return detail::do_simulate(cfg);
    return detail::do_sensitivity(cfg);
  } catch (const CLI::ParseError& e) {
    std::cerr << "ivbart: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "ivbart: " << e.what() << '\n';
    return 1;
  }
}

}  // namespace ivbart::cli
