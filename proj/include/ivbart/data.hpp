#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "ivbart/core.hpp"

namespace ivbart {

// Observed data {T_i, Y_i, x_i, z_i}. x may have zero columns; z has at
// least one.
struct Dataset {
  Eigen::VectorXd y;
  Eigen::VectorXd t;
  Eigen::MatrixXd x;
  Eigen::MatrixXd z;
  std::string y_name = "y";
  std::string t_name = "t";
  std::vector<std::string> x_names;
  std::vector<std::string> z_names;

  std::size_t n() const { return static_cast<std::size_t>(y.size()); }
  std::size_t p_x() const { return static_cast<std::size_t>(x.cols()); }
  std::size_t p_z() const { return static_cast<std::size_t>(z.cols()); }

  void validate() const {
    const auto rows = y.size();
    if (rows < 2) throw Error("dataset needs at least 2 observations");
    if (t.size() != rows || x.rows() != rows || z.rows() != rows)
      throw Error("dataset columns have inconsistent lengths");
    if (z.cols() < 1) throw Error("dataset needs at least one instrument");
    auto finite = [](const auto& m) { return m.allFinite(); };
    if (!finite(y) || !finite(t) || !finite(x) || !finite(z))
      throw Error("dataset contains non-finite entries");
  }
};

// Sample moments of T and Y on the original scale.
struct Standardization {
  double t_mean = 0.0;
  double t_sd = 1.0;
  double y_mean = 0.0;
  double y_sd = 1.0;
};

struct BetaPrior {
  double beta_bar = 0.0;
  double a_beta = 0.01;  // precision on the standardized scale

  void validate() const {
    if (!(a_beta > 0.0) || !std::isfinite(beta_bar))
      throw Error("beta prior needs a_beta > 0 and finite beta_bar");
  }
};

struct FunctionPrior {
  double sigma_f = 1.2;
  double sigma_h = 1.2;
  int num_trees_f = 200;
  int num_trees_h = 200;
  double tree_depth_base = 0.95;
  double tree_depth_power = 2.0;
  int num_cutpoints = 100;

  void validate() const {
    if (!(sigma_f > 0.0) || !(sigma_h > 0.0))
      throw Error("sigma_f and sigma_h must be positive");
    if (num_trees_f < 1 || num_trees_h < 1) throw Error("num_trees must be >= 1");
    if (!(tree_depth_base > 0.0 && tree_depth_base < 1.0))
      throw Error("tree_depth_base must lie in (0, 1)");
    if (!(tree_depth_power >= 0.0)) throw Error("tree_depth_power must be >= 0");
    if (num_cutpoints < 1) throw Error("num_cutpoints must be >= 1");
  }
};

// Calibration constants for the base measure and the concentration prior.
// (a, nu, v) and the alpha bounds are filled in by the solvers in dpm.hpp.
struct DpmPrior {
  double c1 = 0.25;
  double c2 = 3.25;
  double c3 = 10.0;
  double kappa = 0.2;
  double a = 0.0;
  double nu = 0.0;
  double v = 0.0;
  int i_min = 2;
  int i_max = 0;  // 0 means [0.1 n] + 1
  double psi = 0.5;
  double alpha_min = 0.0;
  double alpha_max = 0.0;

  bool solved() const { return a > 0.0 && nu > 1.0 && v > 0.0 && alpha_max > alpha_min; }

  void validate_calibration() const {
    if (!(c1 > 0.0 && c1 < c2)) throw Error("need 0 < c1 < c2");
    if (!(c3 > 0.0)) throw Error("need c3 > 0");
    if (!(kappa > 0.0 && kappa < 1.0)) throw Error("need 0 < kappa < 1");
    if (!(psi > 0.0)) throw Error("need psi > 0");
  }
};

inline int default_i_max(std::size_t n) { return static_cast<int>(0.1 * static_cast<double>(n)) + 1; }

namespace detail {

inline double sample_mean(const Eigen::VectorXd& v) { return v.mean(); }

inline double sample_sd(const Eigen::VectorXd& v) {
  const double m = v.mean();
  const double ss = (v.array() - m).square().sum();
  return std::sqrt(ss / static_cast<double>(v.size() - 1));
}

}  // namespace detail

// Centers and scales T and Y (n-1 denominator); x and z pass through.
inline std::pair<Dataset, Standardization> standardize(const Dataset& data) {
  data.validate();
  Standardization s;
  s.t_mean = detail::sample_mean(data.t);
  s.t_sd = detail::sample_sd(data.t);
  s.y_mean = detail::sample_mean(data.y);
  s.y_sd = detail::sample_sd(data.y);
  // Relative threshold so that a column of identical values with round-off
  // in the mean is still caught.
  auto degenerate = [](double sd, double mean) {
    return !(sd > 1e-12 * std::max(1.0, std::abs(mean)));
  };
  if (degenerate(s.t_sd, s.t_mean)) throw Error("constant treatment column '" + data.t_name + "'");
  if (degenerate(s.y_sd, s.y_mean)) throw Error("constant outcome column '" + data.y_name + "'");

  Dataset out = data;
  out.t = (data.t.array() - s.t_mean) / s.t_sd;
  out.y = (data.y.array() - s.y_mean) / s.y_sd;
  return {std::move(out), s};
}

inline Dataset unstandardize(const Dataset& data, const Standardization& s) {
  Dataset out = data;
  out.t = data.t.array() * s.t_sd + s.t_mean;
  out.y = data.y.array() * s.y_sd + s.y_mean;
  return out;
}

// beta on the standardized scale -> beta in original units.
inline double rescale_beta(double beta_s, const Standardization& s) {
  return beta_s * s.y_sd / s.t_sd;
}

struct ColumnRoles {
  std::string y;
  std::string t;
  std::vector<std::string> x;
  std::vector<std::string> z;
};

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, ',')) {
    auto b = cell.find_first_not_of(" \t\r\"");
    auto e = cell.find_last_not_of(" \t\r\"");
    out.push_back(b == std::string::npos ? std::string() : cell.substr(b, e - b + 1));
  }
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

inline double parse_cell(const std::string& cell, std::size_t row, const std::string& column) {
  double value = 0.0;
  const char* first = cell.data();
  const char* last = cell.data() + cell.size();
  if (!cell.empty() && *first == '+') ++first;
  auto [ptr, ec] = std::from_chars(first, last, value);
  if (cell.empty() || ec != std::errc() || ptr != last || !std::isfinite(value)) {
    throw Error("non-numeric value '" + cell + "' at row " + std::to_string(row) +
                ", column '" + column + "'");
  }
  return value;
}

}  // namespace detail

// Reads a header-driven CSV; rows keep file order. Row numbers in
// diagnostics are 1-based data rows (header excluded).
inline Dataset load_csv(const std::string& path, const ColumnRoles& roles) {
  if (roles.y.empty() || roles.t.empty()) throw Error("column roles need an outcome and a treatment");
  if (roles.z.empty()) throw Error("column roles need at least one instrument");
  std::ifstream in(path);
  if (!in) throw Error("cannot open data file '" + path + "'");

  std::string line;
  if (!std::getline(in, line) || line.find_first_not_of(" \t\r") == std::string::npos)
    throw Error("data file '" + path + "' is empty");
  const auto header = detail::split_csv_line(line);
  std::map<std::string, std::size_t> index;
  for (std::size_t j = 0; j < header.size(); ++j) index.emplace(header[j], j);

  auto locate = [&](const std::string& name) {
    auto it = index.find(name);
    if (it == index.end()) throw Error("missing column '" + name + "' in '" + path + "'");
    return it->second;
  };
  const std::size_t iy = locate(roles.y);
  const std::size_t it = locate(roles.t);
  std::vector<std::size_t> ix, iz;
  for (const auto& c : roles.x) ix.push_back(locate(c));
  for (const auto& c : roles.z) iz.push_back(locate(c));

  std::vector<std::vector<double>> rows;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    ++row;
    auto cells = detail::split_csv_line(line);
    if (cells.size() != header.size())
      throw Error("row " + std::to_string(row) + " has " + std::to_string(cells.size()) +
                  " cells, header has " + std::to_string(header.size()));
    std::vector<double> r;
    r.reserve(2 + ix.size() + iz.size());
    r.push_back(detail::parse_cell(cells[iy], row, roles.y));
    r.push_back(detail::parse_cell(cells[it], row, roles.t));
    for (std::size_t k = 0; k < ix.size(); ++k) r.push_back(detail::parse_cell(cells[ix[k]], row, roles.x[k]));
    for (std::size_t k = 0; k < iz.size(); ++k) r.push_back(detail::parse_cell(cells[iz[k]], row, roles.z[k]));
    rows.push_back(std::move(r));
  }
  if (rows.empty()) throw Error("data file '" + path + "' has a header but no rows");

  const auto n = static_cast<Eigen::Index>(rows.size());
  Dataset d;
  d.y.resize(n);
  d.t.resize(n);
  d.x.resize(n, static_cast<Eigen::Index>(ix.size()));
  d.z.resize(n, static_cast<Eigen::Index>(iz.size()));
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& r = rows[static_cast<std::size_t>(i)];
    d.y(i) = r[0];
    d.t(i) = r[1];
    for (std::size_t k = 0; k < ix.size(); ++k) d.x(i, static_cast<Eigen::Index>(k)) = r[2 + k];
    for (std::size_t k = 0; k < iz.size(); ++k) d.z(i, static_cast<Eigen::Index>(k)) = r[2 + ix.size() + k];
  }
  d.y_name = roles.y;
  d.t_name = roles.t;
  d.x_names = roles.x;
  d.z_names = roles.z;
  d.validate();
  return d;
}

}  // namespace ivbart
