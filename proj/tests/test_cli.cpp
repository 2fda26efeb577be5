#include <gtest/gtest.h>

#include <cstdlib>
#include <sstream>

#include "cli.hpp"
#include "helpers.hpp"

using namespace ivbart;

namespace {

struct Outcome {
  int code;
  std::string err;
};

Outcome run(std::vector<std::string> args) {
  args.insert(args.begin(), "ivbart");
  std::vector<char*> argv;
  for (auto& a : args) argv.push_back(a.data());
  std::ostringstream err, out;
  auto* old_err = std::cerr.rdbuf(err.rdbuf());
  auto* old_out = std::cout.rdbuf(out.rdbuf());
  const int code = cli::cli_main(static_cast<int>(argv.size()), argv.data());
  std::cerr.rdbuf(old_err);
  std::cout.rdbuf(old_out);
  return {code, err.str()};
}

std::filesystem::path write_dataset(const std::filesystem::path& dir, int n = 80) {
  sim::ScenarioSpec spec;
  spec.n = static_cast<std::size_t>(n);
  Random rng(3);
  const auto s = sim::gen_scenario(spec, rng);
  std::ostringstream csv;
  csv << "y,t,x1,x2,x3,x4,z1,z2\n";
  for (int i = 0; i < n; ++i) {
    csv << io::fmt(s.data.y(i)) << ',' << io::fmt(s.data.t(i));
    for (int j = 0; j < 4; ++j) csv << ',' << io::fmt(s.data.x(i, j));
    for (int j = 0; j < 2; ++j) csv << ',' << io::fmt(s.data.z(i, j));
    csv << '\n';
  }
  const auto p = dir / "data.csv";
  testutil::write_text(p, csv.str());
  return p;
}

std::vector<std::string> fit_args(const std::filesystem::path& data, const std::filesystem::path& out,
                                  const std::string& model = "ivbart") {
  return {"fit",  "--model", model,          "--data",  data.string(), "--y",    "y",   "--t",  "t",
          "--z",  "z1,z2",   "--x",          "x1,x2,x3,x4",          "--ntrees", "10", "--burn", "10",
          "--keep", "50",    "--out",        out.string()};
}

}  // namespace

TEST(Cli, UnknownFlagExitsTwoAndNamesIt) {
  const auto dir = testutil::scratch_dir();
  auto args = fit_args(write_dataset(dir), dir / "out");
  args.push_back("--bogus-flag");
  args.push_back("3");
  const auto r = run(args);
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("--bogus-flag"), std::string::npos) << r.err;
}

TEST(Cli, MissingRequiredAndBadValues) {
  EXPECT_EQ(run({"fit", "--y", "y"}).code, 2);
  EXPECT_EQ(run({}).code, 2);
  EXPECT_EQ(run({"simulate", "--scenario", "cubic"}).code, 2);
  const auto r = run({"simulate", "--kappa", "1.5"});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("--kappa"), std::string::npos) << r.err;
  EXPECT_EQ(run({"simulate", "--c1", "4", "--c2", "3"}).code, 2);
}

TEST(Cli, MissingColumnIsRuntimeFailure) {
  const auto dir = testutil::scratch_dir();
  const auto data = write_dataset(dir);
  auto args = fit_args(data, dir / "out");
  args[10] = "z1,zz";  // --z value
  const auto r = run(args);
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("zz"), std::string::npos) << r.err;
}

TEST(Cli, FitWritesRecomputableSummary) {
  const auto dir = testutil::scratch_dir();
  const auto data = write_dataset(dir);
  for (std::string model : {"ivbart", "linear-normal", "linear-dpm"}) {
    const auto out = dir / model;
    ASSERT_EQ(run(fit_args(data, out, model)).code, 0) << model;
    const auto draws = io::read_draws_csv(out / "draws.csv");
    ASSERT_EQ(draws.size(), 50u);
    const auto s = io::summarize(sim::betas(draws));

    std::istringstream sum(testutil::read_text(out / "summary.csv"));
    std::string header, row;
    std::getline(sum, header);
    std::getline(sum, row);
    EXPECT_EQ(header, "model,draws,mean,sd,q025,q975");
    std::vector<std::string> cells;
    std::istringstream rs(row);
    for (std::string c; std::getline(rs, c, ',');) cells.push_back(c);
    ASSERT_EQ(cells.size(), 6u);
    EXPECT_EQ(cells[0], model);
    EXPECT_EQ(std::stoul(cells[1]), 50u);
    EXPECT_NEAR(std::stod(cells[2]), s.mean, 1e-10);
    EXPECT_NEAR(std::stod(cells[3]), s.sd, 1e-10);
    EXPECT_NEAR(std::stod(cells[4]), s.q025, 1e-10);
    EXPECT_NEAR(std::stod(cells[5]), s.q975, 1e-10);

    const auto meta = nlohmann::json::parse(testutil::read_text(out / "meta.json"));
    EXPECT_EQ(meta["model"], model);
    EXPECT_EQ(meta["controls"]["seed"], 1);
    EXPECT_EQ(meta["software"]["version"], kVersion);
    EXPECT_TRUE(meta["priors"]["dpm"]["nu"].get<double>() > 1.0);
    EXPECT_EQ(meta["data"]["roles"]["z"].size(), 2u);
    EXPECT_TRUE(meta.contains("standardization"));
    EXPECT_TRUE(meta.contains("tsls_beta"));
  }
}

TEST(Cli, IdenticalInvocationsGiveIdenticalDraws) {
  const auto dir = testutil::scratch_dir();
  const auto data = write_dataset(dir);
  auto a = fit_args(data, dir / "a");
  auto b = fit_args(data, dir / "b");
  for (auto* v : {&a, &b}) {
    v->push_back("--seed");
    v->push_back("77");
  }
  ASSERT_EQ(run(a).code, 0);
  ASSERT_EQ(run(b).code, 0);
  EXPECT_EQ(testutil::read_text(dir / "a" / "draws.csv"), testutil::read_text(dir / "b" / "draws.csv"));
}

TEST(Cli, SeedFallsBackToEnvironment) {
  const auto dir = testutil::scratch_dir();
  const auto data = write_dataset(dir);
  ::setenv("IVBART_SEED", "4242", 1);
  const int code = run(fit_args(data, dir / "env", "linear-normal")).code;
  ::unsetenv("IVBART_SEED");
  ASSERT_EQ(code, 0);
  const auto meta = nlohmann::json::parse(testutil::read_text(dir / "env" / "meta.json"));
  EXPECT_EQ(meta["controls"]["seed"], 4242);

  ::setenv("IVBART_SEED", "not-a-number", 1);
  const int bad = run(fit_args(data, dir / "bad", "linear-normal")).code;
  ::unsetenv("IVBART_SEED");
  EXPECT_EQ(bad, 2);
}

TEST(Cli, SimulateWritesStudyFiles) {
  const auto dir = testutil::scratch_dir();
  const auto out = dir / "sim";
  ASSERT_EQ(run({"simulate", "--scenario", "linear", "--n", "40", "--reps", "2", "--models",
                 "ivbart,linear-normal,linear-dpm", "--ntrees", "5", "--burn", "5", "--keep", "40", "--out",
                 out.string()})
                .code,
            0);
  std::istringstream m(testutil::read_text(out / "metrics.csv"));
  std::string line;
  std::getline(m, line);
  EXPECT_EQ(line, "scenario,n,model,rmse,relative_rmse");
  int rows = 0;
  while (std::getline(m, line)) rows += !line.empty();
  EXPECT_EQ(rows, 3);
  for (const char* f : {"intervals.csv", "summary.csv", "meta.json", "density_ivbart.csv",
                        "density_linear-normal.csv", "density_linear-dpm.csv"})
    EXPECT_TRUE(std::filesystem::exists(out / f)) << f;
  const auto meta = nlohmann::json::parse(testutil::read_text(out / "meta.json"));
  EXPECT_EQ(meta["scenario"]["replications"], 2);
  EXPECT_EQ(meta["scenario"]["n"], 40);
}

TEST(Cli, SensitivityOnSimulatedData) {
  const auto dir = testutil::scratch_dir();
  const auto out = dir / "sens";
  ASSERT_EQ(run({"sensitivity", "--n", "40", "--sigmas", "0.8,1.2", "--ntrees", "5", "--burn", "5", "--keep", "10",
                 "--out", out.string()})
                .code,
            0);
  int draws_files = 0;
  for (const auto& e : std::filesystem::directory_iterator(out))
    draws_files += e.path().filename().string().rfind("draws_", 0) == 0;
  EXPECT_EQ(draws_files, 4);
}
