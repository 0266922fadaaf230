#pragma once

// Monte Carlo study: Y = b1 X1 + b2 X2 + e with X1 ~ U(-3, 3), X2 ~ Bern(0.5),
// truncation T ~ U(-6, 1) and censoring C ~ U(1, 7). Subjects with Y <= T are
// discarded until n are kept.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "ltrc/distributions.hpp"
#include "ltrc/estimator.hpp"
#include "ltrc/inference.hpp"
#include "ltrc/model.hpp"
#include "ltrc/parallel.hpp"
#include "ltrc/random.hpp"

namespace ltrc {

struct SimScenario {
  ErrorLaw law = ErrorLaw::normal;
  int n = 200;
  int reps = 1;
  Eigen::VectorXd beta_true = Eigen::Vector2d(1.0, 1.0);
  std::uint64_t seed = 1;
  /// nullopt selects the number of interior knots by cross-validation.
  std::optional<int> knots;
  std::vector<int> cv_candidates{1, 2, 3, 4};
  int cv_folds = 5;
  FitConfig fit;
  unsigned threads = 1;
  int curve_points = 101;
  double near_truth = 0.5;  // infinity-norm radius for "start converged near truth"

  void validate() const {
    if (n <= 0) throw std::invalid_argument("SimScenario: n must be positive");
    if (reps <= 0) throw std::invalid_argument("SimScenario: reps must be positive");
    if (beta_true.size() != 2) throw std::invalid_argument("SimScenario: beta_true must have length 2");
    if (knots && *knots < 0) throw std::invalid_argument("SimScenario: knots must be >= 0");
    if (curve_points < 2) throw std::invalid_argument("SimScenario: curve_points must be >= 2");
  }
};

/// Interior knot counts used for each law at n = 200, 400, 800 (nearest size
/// for other n).
inline int table_knots(ErrorLaw law, int n) {
  const int col = n <= 300 ? 0 : (n <= 600 ? 1 : 2);
  static constexpr int table[4][3] = {{1, 1, 1}, {1, 1, 2}, {2, 3, 4}, {2, 2, 3}};
  switch (law) {
    case ErrorLaw::normal: return table[0][col];
    case ErrorLaw::gumbel:
    case ErrorLaw::gumbel_min: return table[1][col];
    case ErrorLaw::mix_wide: return table[2][col];
    case ErrorLaw::mix_shift: return table[3][col];
  }
  return 1;
}

struct SimulatedData {
  Dataset data;
  std::size_t attempts = 0;
  std::size_t truncated = 0;
  std::size_t censored = 0;
};

inline SimulatedData simulate_dataset(const SimScenario& sc, Rng& rng) {
  SimulatedData out;
  out.data.reserve(static_cast<std::size_t>(sc.n));
  while (static_cast<int>(out.data.size()) < sc.n) {
    const double x1 = uniform(rng, -3.0, 3.0);
    const double x2 = uniform(rng, 0.0, 1.0) < 0.5 ? 1.0 : 0.0;
    const double e = draw_error(sc.law, rng);
    const double t = uniform(rng, -6.0, 1.0);
    const double c = uniform(rng, 1.0, 7.0);
    ++out.attempts;
    const double ystar = sc.beta_true[0] * x1 + sc.beta_true[1] * x2 + e;
    if (ystar <= t) {
      ++out.truncated;
      continue;
    }
    const int delta = ystar <= c ? 1 : 0;
    if (!delta) ++out.censored;
    out.data.push_back({std::min(ystar, c), delta, t, {x1, x2}});
  }
  return out;
}

/// Left-truncated, uncensored data with five covariates shaped like an
/// oldest-old cohort: one continuous covariate (years lived past 90) and four
/// binary indicators. The response and truncation are generated on the logit
/// scale and returned on the (0, 1) scale.
struct ApplicationLikeData {
  Dataset data;  // response and truncation on the (0, 1) scale
  std::vector<std::string> names{"death_age_90", "cohort2", "female", "college", "comorbidity"};
  Eigen::VectorXd beta_true;
};

inline ApplicationLikeData simulate_application_like(int n, std::uint64_t seed) {
  ApplicationLikeData out;
  out.beta_true.resize(5);
  out.beta_true << 0.06, 0.33, -0.07, 0.16, 0.02;
  Rng rng = make_rng(seed, 0);
  auto expit = [](double v) { return 1.0 / (1.0 + std::exp(-v)); };
  while (static_cast<int>(out.data.size()) < n) {
    double age = 8.5 + 3.4 * standard_normal(rng);
    age = std::clamp(age, 1.3, 21.2);
    const double cohort2 = uniform(rng, 0.0, 1.0) < 0.2 ? 1.0 : 0.0;
    const double female = uniform(rng, 0.0, 1.0) < 0.72 ? 1.0 : 0.0;
    const double college = uniform(rng, 0.0, 1.0) < 0.4 ? 1.0 : 0.0;
    const double comorb = uniform(rng, 0.0, 1.0) < 0.6 ? 1.0 : 0.0;
    const std::vector<double> x{age, cohort2, female, college, comorb};
    double xb = 0.0;
    for (std::size_t j = 0; j < x.size(); ++j) xb += x[j] * out.beta_true[static_cast<Eigen::Index>(j)];
    const double e = 0.6 + 0.8 * standard_normal(rng);
    const double t = -0.5 + 1.0 * standard_normal(rng);
    const double ystar = xb + e;
    if (ystar <= t) continue;
    out.data.push_back({expit(ystar), 1, expit(t), x});
  }
  return out;
}

struct ReplicationResult {
  bool converged = false;
  int knots = 0;
  Eigen::VectorXd beta_hat;
  Eigen::VectorXd var1;  // diagonals
  Eigen::VectorXd var2;
  std::vector<bool> covered;
  int starts = 0;
  int starts_near_truth = 0;
  std::vector<double> curve;  // fitted log-hazard on the report grid
  std::size_t attempts = 0;
  std::size_t truncated = 0;
  std::size_t censored = 0;
  std::size_t kept = 0;
  Diagnostics diagnostics;
};

struct CoefficientSummary {
  double bias = 0.0;
  double var1_mean = 0.0;
  double var2_mean = 0.0;
  double var3_empirical = 0.0;
  double coverage95 = 0.0;
  double mc_se_bias = 0.0;  // sqrt(var3 / reps)
};

struct SimReport {
  SimScenario scenario;
  std::vector<CoefficientSummary> coefficients;
  double pct_truncated = 0.0;
  double pct_censored = 0.0;
  double convergence_fraction = 0.0;
  int reps_used = 0;
  int reps_excluded = 0;
  std::vector<int> knots_used;  // per replication
  std::vector<double> grid;
  std::vector<std::vector<double>> curves;  // per used replication
  std::vector<double> curve_mean;
  std::vector<double> curve_truth;
  std::vector<ReplicationResult> replications;
};

/// Grid spanning the central `mass` of the error law.
inline std::vector<double> central_grid(ErrorLaw law, double mass, int points) {
  const double lo = error_quantile(law, 0.5 * (1.0 - mass));
  const double hi = error_quantile(law, 0.5 * (1.0 + mass));
  std::vector<double> g(static_cast<std::size_t>(points));
  for (int i = 0; i < points; ++i) g[static_cast<std::size_t>(i)] = lo + (hi - lo) * i / (points - 1);
  return g;
}

inline ReplicationResult run_replication(const SimScenario& sc, int rep, const std::vector<double>& grid) {
  ReplicationResult rr;
  Rng rng = make_rng(sc.seed, static_cast<std::uint64_t>(rep));
  SimulatedData sim = simulate_dataset(sc, rng);
  rr.attempts = sim.attempts;
  rr.truncated = sim.truncated;
  rr.censored = sim.censored;
  rr.kept = sim.data.size();

  FitConfig cfg = sc.fit;
  cfg.threads = 1;
  cfg.seed = derive_seed(sc.seed, 1'000'000ULL + static_cast<std::uint64_t>(rep));
  rr.knots = sc.knots ? *sc.knots : select_knots(sim.data, sc.cv_candidates, sc.cv_folds, cfg);

  const FitResult fr = fit(sim.data, rr.knots, cfg);
  rr.diagnostics = fr.diagnostics;
  rr.converged = fr.converged;
  rr.starts = static_cast<int>(fr.starts.size());
  for (const auto& s : fr.starts)
    if (s.converged && (s.final_theta.beta - sc.beta_true).cwiseAbs().maxCoeff() < sc.near_truth)
      ++rr.starts_near_truth;
  if (!fr.converged) return rr;

  const InferenceReport inf = infer(fr.theta_hat, sim.data, fr.basis, fr.hessian);
  rr.beta_hat = fr.theta_hat.beta;
  rr.var1 = inf.var1.diagonal();
  rr.var2 = inf.var2.diagonal();
  for (Eigen::Index j = 0; j < rr.beta_hat.size(); ++j)
    rr.covered.push_back(inf.ci_lo[j] <= sc.beta_true[j] && sc.beta_true[j] <= inf.ci_hi[j]);
  rr.curve.reserve(grid.size());
  for (double s : grid) rr.curve.push_back(fitted_log_hazard(fr.basis, fr.theta_hat.gamma, s));
  return rr;
}

inline SimReport summarize(const SimScenario& sc, std::vector<ReplicationResult> reps,
                           const std::vector<double>& grid) {
  SimReport rep;
  rep.scenario = sc;
  rep.grid = grid;
  for (double s : grid) rep.curve_truth.push_back(true_log_hazard(sc.law, s));
  const Eigen::Index d = sc.beta_true.size();
  rep.coefficients.assign(static_cast<std::size_t>(d), {});

  std::size_t attempts = 0, truncated = 0, censored = 0, kept = 0;
  long starts = 0, near = 0;
  std::vector<const ReplicationResult*> used;
  for (const auto& r : reps) {
    attempts += r.attempts;
    truncated += r.truncated;
    censored += r.censored;
    kept += r.kept;
    starts += r.starts;
    near += r.starts_near_truth;
    rep.knots_used.push_back(r.knots);
    if (r.converged) {
      used.push_back(&r);
    } else {
      ++rep.reps_excluded;
    }
  }
  rep.reps_used = static_cast<int>(used.size());
  rep.pct_truncated = attempts ? static_cast<double>(truncated) / static_cast<double>(attempts) : 0.0;
  rep.pct_censored = kept ? static_cast<double>(censored) / static_cast<double>(kept) : 0.0;
  rep.convergence_fraction = starts ? static_cast<double>(near) / static_cast<double>(starts) : 0.0;

  const double m = static_cast<double>(used.size());
  if (!used.empty()) {
    for (Eigen::Index j = 0; j < d; ++j) {
      auto& cs = rep.coefficients[static_cast<std::size_t>(j)];
      double mean = 0.0, v1 = 0.0, v2 = 0.0, cov = 0.0;
      for (const auto* r : used) {
        mean += r->beta_hat[j];
        v1 += r->var1[j];
        v2 += r->var2[j];
        cov += r->covered[static_cast<std::size_t>(j)] ? 1.0 : 0.0;
      }
      mean /= m;
      double ss = 0.0;
      for (const auto* r : used) ss += (r->beta_hat[j] - mean) * (r->beta_hat[j] - mean);
      cs.bias = mean - sc.beta_true[j];
      cs.var1_mean = v1 / m;
      cs.var2_mean = v2 / m;
      cs.var3_empirical = used.size() > 1 ? ss / (m - 1.0) : 0.0;
      cs.coverage95 = cov / m;
      cs.mc_se_bias = std::sqrt(cs.var3_empirical / m);
    }
    rep.curve_mean.assign(grid.size(), 0.0);
    for (const auto* r : used) {
      rep.curves.push_back(r->curve);
      for (std::size_t g = 0; g < grid.size(); ++g) rep.curve_mean[g] += r->curve[g] / m;
    }
  }
  rep.replications = std::move(reps);
  return rep;
}

/// Independent dataset -> fit -> inference pipelines, aggregated in
/// replication order. Replication r draws its data from stream r of the
/// scenario seed, so results do not depend on the thread count.
inline SimReport run_study(const SimScenario& sc) {
  sc.validate();
  sc.fit.validate();
  const std::vector<double> grid = central_grid(sc.law, 0.95, sc.curve_points);
  std::vector<ReplicationResult> reps(static_cast<std::size_t>(sc.reps));
  parallel_for(reps.size(), sc.threads,
               [&](std::size_t r) { reps[r] = run_replication(sc, static_cast<int>(r), grid); });
  return summarize(sc, std::move(reps), grid);
}

}  // namespace ltrc
