#pragma once

// Delimited-text ingestion and report writers. Every table starts with a
// "# schema: <name>/<version>" comment line; the remaining lines are plain
// delimited text with a fixed column order.

#include <charconv>
#include <cmath>
#include <cstddef>
#include <cstdio>
#include <fstream>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "ltrc/estimator.hpp"
#include "ltrc/inference.hpp"
#include "ltrc/model.hpp"
#include "ltrc/simulation.hpp"

namespace ltrc {

inline constexpr const char* kCoefficientSchema = "ltrc.coefficients/1";
inline constexpr const char* kFitSchema = "ltrc.fit/1";
inline constexpr const char* kCurveSchema = "ltrc.curve/1";
inline constexpr const char* kSimCurveSchema = "ltrc.sim_curve/1";
inline constexpr const char* kMetricsSchema = "ltrc.metrics/1";
inline constexpr const char* kCvSchema = "ltrc.cv/1";
inline constexpr const char* kDatasetSchema = "ltrc.dataset/1";

class InputError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Transform { none, log, logit };

inline std::string to_string(Transform t) {
  switch (t) {
    case Transform::none: return "none";
    case Transform::log: return "log";
    case Transform::logit: return "logit";
  }
  return "none";
}

inline Transform parse_transform(std::string_view s) {
  if (s == "none") return Transform::none;
  if (s == "log") return Transform::log;
  if (s == "logit") return Transform::logit;
  throw std::invalid_argument("unknown transform '" + std::string(s) + "' (expected none, log or logit)");
}

/// Applies the response transform; `what` and `row` only feed the error text.
inline double apply_transform(Transform t, double v, const std::string& what, std::size_t row) {
  switch (t) {
    case Transform::none: return v;
    case Transform::log:
      if (!(v > 0.0))
        throw InputError("row " + std::to_string(row) + ": log transform needs " + what + " > 0, got " +
                         std::to_string(v));
      return std::log(v);
    case Transform::logit:
      if (!(v > 0.0 && v < 1.0))
        throw InputError("row " + std::to_string(row) + ": logit transform needs " + what +
                         " strictly inside (0, 1), got " + std::to_string(v));
      return std::log(v / (1.0 - v));
  }
  return v;
}

/// Deterministic text for a double: shortest form that round-trips.
inline std::string format_number(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

/// Fixed significant digits, for human-facing tables.
inline std::string format_fixed(double v, int digits = 6) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*g", digits, v);
  return buf;
}

struct ColumnMap {
  std::string response = "y";
  std::optional<std::string> event;  // absent: every row is an event
  std::optional<std::string> trunc;  // absent: no truncation
  std::vector<std::string> covars;   // empty: every other column
  char delimiter = ',';
};

struct LoadedData {
  Dataset data;
  std::vector<std::string> covariate_names;
};

namespace detail {

inline std::string trim(std::string_view s) {
  std::size_t a = 0;
  std::size_t b = s.size();
  while (a < b && (s[a] == ' ' || s[a] == '\t' || s[a] == '\r' || s[a] == '"')) ++a;
  while (b > a && (s[b - 1] == ' ' || s[b - 1] == '\t' || s[b - 1] == '\r' || s[b - 1] == '"')) --b;
  return std::string(s.substr(a, b - a));
}

inline std::vector<std::string> split(const std::string& line, char delim) {
  std::vector<std::string> out;
  std::size_t start = 0;
  for (;;) {
    const std::size_t pos = line.find(delim, start);
    out.push_back(trim(std::string_view(line).substr(start, pos == std::string::npos ? pos : pos - start)));
    if (pos == std::string::npos) break;
    start = pos + 1;
  }
  return out;
}

inline std::optional<double> parse_double(const std::string& s) {
  if (s.empty()) return std::nullopt;
  double v = 0.0;
  const char* first = s.data();
  if (*first == '+') ++first;
  const auto res = std::from_chars(first, s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) return std::nullopt;
  return v;
}

inline std::size_t column_index(const std::vector<std::string>& header, const std::string& name) {
  for (std::size_t i = 0; i < header.size(); ++i)
    if (header[i] == name) return i;
  throw InputError("column '" + name + "' not found in header");
}

}  // namespace detail

/// Reads a delimited table with a header line. Rows are numbered from 1 (the
/// first data line) in error messages. The transform is applied to the
/// response and truncation columns alike.
inline LoadedData read_dataset(std::istream& in, const ColumnMap& map, Transform transform = Transform::none) {
  std::string line;
  std::vector<std::string> header;
  while (std::getline(in, line)) {
    if (detail::trim(line).empty() || line[0] == '#') continue;
    header = detail::split(line, map.delimiter);
    break;
  }
  if (header.empty()) throw InputError("input has no header line");

  const std::size_t yi = detail::column_index(header, map.response);
  std::optional<std::size_t> ei;
  std::optional<std::size_t> ti;
  if (map.event) ei = detail::column_index(header, *map.event);
  if (map.trunc) ti = detail::column_index(header, *map.trunc);

  LoadedData out;
  std::vector<std::size_t> xi;
  if (map.covars.empty()) {
    for (std::size_t c = 0; c < header.size(); ++c) {
      if (c == yi || (ei && c == *ei) || (ti && c == *ti)) continue;
      xi.push_back(c);
      out.covariate_names.push_back(header[c]);
    }
  } else {
    for (const auto& name : map.covars) {
      xi.push_back(detail::column_index(header, name));
      out.covariate_names.push_back(name);
    }
  }
  if (xi.empty()) throw InputError("no covariate columns selected");

  std::size_t row = 0;
  while (std::getline(in, line)) {
    if (detail::trim(line).empty() || line[0] == '#') continue;
    ++row;
    const std::vector<std::string> cells = detail::split(line, map.delimiter);
    const std::string where = "row " + std::to_string(row);
    if (cells.size() != header.size())
      throw InputError(where + ": expected " + std::to_string(header.size()) + " fields, found " +
                       std::to_string(cells.size()));
    auto number = [&](std::size_t c) {
      const auto v = detail::parse_double(cells[c]);
      if (!v) throw InputError(where + ": column '" + header[c] + "' is missing or not a number");
      if (!std::isfinite(*v)) throw InputError(where + ": column '" + header[c] + "' is not finite");
      return *v;
    };

    Observation obs;
    obs.y = apply_transform(transform, number(yi), "the response", row);
    if (ei) {
      const double e = number(*ei);
      if (e != 0.0 && e != 1.0) throw InputError(where + ": event indicator must be 0 or 1");
      obs.delta = static_cast<int>(e);
    }
    if (ti && !cells[*ti].empty()) {
      const double traw = number(*ti);
      obs.t = apply_transform(transform, traw, "the truncation time", row);
      if (!(obs.y > *obs.t))
        throw InputError(where + ": response must exceed truncation time (subject entered after the event)");
    }
    obs.x.reserve(xi.size());
    for (std::size_t c : xi) obs.x.push_back(number(c));
    out.data.push_back(std::move(obs));
  }
  if (out.data.empty()) throw InputError("input has no data rows");

  for (std::size_t j = 0; j < xi.size(); ++j) {
    const double first = out.data.front().x[j];
    bool constant = true;
    for (const auto& o : out.data) constant = constant && o.x[j] == first;
    if (constant)
      throw InputError("covariate '" + out.covariate_names[j] +
                       "' is constant; the model has no intercept because the error log-hazard already "
                       "absorbs location, so a constant column is not identifiable. Drop it.");
  }
  validate_dataset(out.data);
  return out;
}

inline LoadedData read_dataset_file(const std::string& path, const ColumnMap& map,
                                    Transform transform = Transform::none) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open '" + path + "'");
  return read_dataset(in, map, transform);
}

/// Writes y, event, trunc (blank when absent) and the covariates with
/// round-trip precision.
inline void write_dataset(std::ostream& os, const Dataset& data, const std::vector<std::string>& names) {
  os << "# schema: " << kDatasetSchema << '\n';
  os << "y,event,trunc";
  for (const auto& n : names) os << ',' << n;
  os << '\n';
  for (const auto& o : data) {
    os << format_number(o.y) << ',' << o.delta << ',';
    if (o.t) os << format_number(*o.t);
    for (double v : o.x) os << ',' << format_number(v);
    os << '\n';
  }
}

inline std::vector<std::string> default_covariate_names(std::size_t d) {
  std::vector<std::string> names;
  for (std::size_t j = 0; j < d; ++j) names.push_back("x" + std::to_string(j + 1));
  return names;
}

inline void write_coefficients(std::ostream& os, const std::vector<std::string>& names,
                               const InferenceReport& inf) {
  os << "# schema: " << kCoefficientSchema << '\n';
  os << "covariate,estimate,se_var2,ci_lo,ci_hi,p_value,se_var1\n";
  for (Eigen::Index j = 0; j < inf.estimate.size(); ++j) {
    os << names[static_cast<std::size_t>(j)] << ',' << format_fixed(inf.estimate[j]) << ','
       << format_fixed(std::sqrt(std::max(inf.var2(j, j), 0.0))) << ',' << format_fixed(inf.ci_lo[j]) << ','
       << format_fixed(inf.ci_hi[j]) << ',' << format_fixed(inf.p_values[j], 4) << ','
       << format_fixed(std::sqrt(std::max(inf.var1(j, j), 0.0))) << '\n';
  }
}

inline nlohmann::ordered_json to_json(const Eigen::VectorXd& v) {
  auto a = nlohmann::ordered_json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v[i]);
  return a;
}

inline nlohmann::ordered_json to_json(const Eigen::MatrixXd& m) {
  auto a = nlohmann::ordered_json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) a.push_back(to_json(Eigen::VectorXd(m.row(i).transpose())));
  return a;
}

inline nlohmann::ordered_json fit_document(const FitResult& fr, const InferenceReport* inf,
                                           const std::vector<std::string>& names, Transform transform,
                                           const FitConfig& config, const KnotSelection* cv) {
  nlohmann::ordered_json j;
  j["schema"] = kFitSchema;
  j["converged"] = fr.converged;
  j["loglik"] = fr.loglik;
  j["score_max_norm"] = fr.score_norm;
  j["transform"] = to_string(transform);
  j["covariates"] = names;
  j["beta"] = to_json(fr.theta_hat.beta);
  j["gamma"] = to_json(fr.theta_hat.gamma);
  j["basis"] = {{"domain_lo", fr.basis.lo()},
                {"domain_hi", fr.basis.hi()},
                {"interior_knots", fr.basis.interior_knots()},
                {"interior_count", fr.basis.interior_count()},
                {"basis_count", fr.basis.basis_count()}};
  j["naive_ls"] = {{"beta", to_json(fr.naive.beta)}, {"se", to_json(fr.naive.se)}};
  j["config"] = {{"seed", config.seed},
                 {"n_starts", config.n_starts},
                 {"noise_scale", config.noise_scale},
                 {"max_iter", config.max_iter},
                 {"grad_tol", config.grad_tol},
                 {"decrement_tol", config.decrement_tol},
                 {"gamma_floor", config.gamma_floor},
                 {"domain_pad", config.domain_pad},
                 {"direction", config.direction == SearchDirection::hybrid ? "hybrid" : "diagonal"}};
  j["converged_starts"] = fr.converged_starts;
  j["winning_start"] = fr.winning_start;
  auto starts = nlohmann::ordered_json::array();
  for (const auto& s : fr.starts) {
    starts.push_back({{"initial_beta", to_json(s.initial.beta)},
                      {"final_beta", to_json(s.final_theta.beta)},
                      {"loglik", s.loglik},
                      {"iterations", s.iterations},
                      {"converged", s.converged},
                      {"stop", to_string(s.stop)},
                      {"score_max_norm", s.score_norm}});
  }
  j["starts"] = std::move(starts);
  j["diagnostics"] = {{"clamped_evals", fr.diagnostics.clamped_evals},
                      {"exp_capped", fr.diagnostics.exp_capped}};
  if (inf) {
    j["inference"] = {{"var1", to_json(inf->var1)},
                      {"var2", to_json(inf->var2)},
                      {"ci_lo", to_json(inf->ci_lo)},
                      {"ci_hi", to_json(inf->ci_hi)},
                      {"p_values", to_json(inf->p_values)},
                      {"var1_condition", inf->var1_condition},
                      {"info_condition", inf->info_condition},
                      {"info_min_eigenvalue", inf->info_min_eigenvalue},
                      {"notes", inf->notes}};
  }
  if (cv) {
    auto cands = nlohmann::ordered_json::array();
    for (const auto& c : cv->candidates)
      cands.push_back({{"interior_knots", c.n_interior},
                       {"ok", c.ok},
                       {"mean_heldout_loglik", c.ok ? nlohmann::ordered_json(c.mean_heldout_loglik) : nullptr},
                       {"message", c.message}});
    j["cross_validation"] = {{"selected", cv->selected}, {"candidates", std::move(cands)}};
  }
  return j;
}

/// Fitted log-hazard on an even grid over the spline domain.
inline void write_curve(std::ostream& os, const BasisSpec& spec, const Eigen::VectorXd& gamma, int points = 201) {
  os << "# schema: " << kCurveSchema << '\n';
  os << "s,g_hat\n";
  for (int i = 0; i < points; ++i) {
    const double s = spec.lo() + (spec.hi() - spec.lo()) * i / (points - 1);
    os << format_number(s) << ',' << format_number(fitted_log_hazard(spec, gamma, s)) << '\n';
  }
}

inline void write_cv_table(std::ostream& os, const KnotSelection& sel) {
  os << "# schema: " << kCvSchema << '\n';
  os << "interior_knots,ok,mean_heldout_loglik,selected\n";
  for (const auto& c : sel.candidates) {
    os << c.n_interior << ',' << (c.ok ? 1 : 0) << ','
       << (c.ok ? format_fixed(c.mean_heldout_loglik, 10) : std::string("nan")) << ','
       << (c.n_interior == sel.selected ? 1 : 0) << '\n';
  }
}

/// One row per coefficient; variances and bias are scaled by 1e3.
inline void write_metrics(std::ostream& os, const SimReport& rep) {
  const SimScenario& sc = rep.scenario;
  os << "# schema: " << kMetricsSchema << '\n';
  os << "law,n,reps,reps_used,reps_excluded,knots,coefficient,beta_true,bias_e3,var1_e3,var2_e3,var3_e3,"
        "coverage95,pct_truncated,pct_censored,convergence_fraction\n";
  std::map<int, int> counts;
  for (int k : rep.knots_used) ++counts[k];
  std::string knots;
  if (sc.knots) {
    knots = std::to_string(*sc.knots);
  } else {
    for (const auto& [k, c] : counts) knots += (knots.empty() ? "cv:" : "|") + std::to_string(k) + "x" + std::to_string(c);
  }
  for (std::size_t j = 0; j < rep.coefficients.size(); ++j) {
    const auto& c = rep.coefficients[j];
    os << to_string(sc.law) << ',' << sc.n << ',' << sc.reps << ',' << rep.reps_used << ',' << rep.reps_excluded
       << ',' << knots << ",beta" << (j + 1) << ',' << format_fixed(sc.beta_true[static_cast<Eigen::Index>(j)])
       << ',' << format_fixed(1e3 * c.bias, 4) << ',' << format_fixed(1e3 * c.var1_mean, 4) << ','
       << format_fixed(1e3 * c.var2_mean, 4) << ',' << format_fixed(1e3 * c.var3_empirical, 4) << ','
       << format_fixed(c.coverage95, 4) << ',' << format_fixed(rep.pct_truncated, 4) << ','
       << format_fixed(rep.pct_censored, 4) << ',' << format_fixed(rep.convergence_fraction, 4) << '\n';
  }
}

/// Grid, pointwise mean, truth, then the first `sample` replication curves.
inline void write_sim_curves(std::ostream& os, const SimReport& rep, std::size_t sample = 20) {
  os << "# schema: " << kSimCurveSchema << '\n';
  const std::size_t k = std::min(sample, rep.curves.size());
  os << "s,mean,truth";
  for (std::size_t r = 0; r < k; ++r) os << ",rep" << r;
  os << '\n';
  for (std::size_t g = 0; g < rep.grid.size(); ++g) {
    os << format_number(rep.grid[g]) << ','
       << (rep.curve_mean.empty() ? std::string("nan") : format_number(rep.curve_mean[g])) << ','
       << format_number(rep.curve_truth[g]);
    for (std::size_t r = 0; r < k; ++r) os << ',' << format_number(rep.curves[r][g]);
    os << '\n';
  }
}

inline nlohmann::ordered_json sim_document(const SimReport& rep) {
  const SimScenario& sc = rep.scenario;
  nlohmann::ordered_json j;
  j["schema"] = "ltrc.simulation/1";
  j["scenario"] = {{"law", to_string(sc.law)},
                   {"n", sc.n},
                   {"reps", sc.reps},
                   {"seed", sc.seed},
                   {"beta_true", to_json(sc.beta_true)},
                   {"knots", sc.knots ? nlohmann::ordered_json(*sc.knots) : nlohmann::ordered_json("cv")}};
  j["pct_truncated"] = rep.pct_truncated;
  j["pct_censored"] = rep.pct_censored;
  j["convergence_fraction"] = rep.convergence_fraction;
  j["reps_used"] = rep.reps_used;
  j["reps_excluded"] = rep.reps_excluded;
  j["knots_used"] = rep.knots_used;
  auto coefs = nlohmann::ordered_json::array();
  for (const auto& c : rep.coefficients)
    coefs.push_back({{"bias", c.bias},
                     {"var1_mean", c.var1_mean},
                     {"var2_mean", c.var2_mean},
                     {"var3_empirical", c.var3_empirical},
                     {"coverage95", c.coverage95},
                     {"mc_se_bias", c.mc_se_bias}});
  j["coefficients"] = std::move(coefs);
  return j;
}

inline void write_text_file(const std::string& path, const std::string& contents) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write '" + path + "'");
  out << contents;
}

}  // namespace ltrc
