#pragma once

// Sieve maximum likelihood: naive least-squares starting values, multi-start
// diagonally preconditioned gradient ascent, and cross-validated choice of the
// number of interior knots.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "ltrc/likelihood.hpp"
#include "ltrc/model.hpp"
#include "ltrc/parallel.hpp"
#include "ltrc/random.hpp"
#include "ltrc/spline_basis.hpp"

namespace ltrc {

enum class KnotPlacement { equal, quantile };

enum class SearchDirection {
  diagonal,  // D^{-1} score with D = |diag(hessian)|
  hybrid,    // full-information Newton step when -hessian is positive definite, else diagonal
};

struct FitConfig {
  int n_starts = 10;
  double noise_scale = 3.0;  // multiplier on the naive standard errors
  int max_iter = 500;
  double grad_tol = 1e-6;  // on the max-norm of the score
  /// A start whose line search can no longer increase the log-likelihood
  /// also counts as converged when the Newton decrement s'(-H)^{-1}s (twice
  /// the predicted remaining gain) is at most this.
  double decrement_tol = 1e-8;
  /// Lower bound on spline coefficients. exp{g} at this level is below the
  /// rounding of any log-likelihood, so the bound only stops coefficients over
  /// event-free stretches from running off to -infinity.
  double gamma_floor = -1e6;
  double step_shrink = 0.5;
  int max_halvings = 30;
  double diag_floor = 1e-8;
  double domain_pad = 0.1;  // fraction of the residual range added on each side
  KnotPlacement placement = KnotPlacement::equal;
  SearchDirection direction = SearchDirection::hybrid;
  std::uint64_t seed = 1;
  unsigned threads = 1;

  void validate() const {
    if (n_starts < 1) throw std::invalid_argument("FitConfig: n_starts must be >= 1");
    if (!(noise_scale >= 0.0)) throw std::invalid_argument("FitConfig: noise_scale must be >= 0");
    if (max_iter < 0) throw std::invalid_argument("FitConfig: max_iter must be >= 0");
    if (!(grad_tol > 0.0)) throw std::invalid_argument("FitConfig: grad_tol must be positive");
    if (!(decrement_tol >= 0.0)) throw std::invalid_argument("FitConfig: decrement_tol must be >= 0");
    if (!(gamma_floor < 0.0)) throw std::invalid_argument("FitConfig: gamma_floor must be negative");
    if (!(step_shrink > 0.0 && step_shrink < 1.0))
      throw std::invalid_argument("FitConfig: step_shrink must lie in (0, 1)");
  }
};

struct NaiveFit {
  Eigen::VectorXd beta;
  Eigen::VectorXd se;
};

/// Least squares of y on x over uncensored subjects, ignoring truncation.
inline NaiveFit naive_ls(const Dataset& data) {
  const std::size_t d = covariate_dim(data);
  std::vector<const Observation*> events;
  for (const auto& o : data)
    if (o.delta == 1) events.push_back(&o);
  if (events.size() <= d)
    throw std::invalid_argument("naive_ls: need more uncensored subjects than covariates");

  const auto m = static_cast<Eigen::Index>(events.size());
  const auto dd = static_cast<Eigen::Index>(d);
  Eigen::MatrixXd X(m, dd);
  Eigen::VectorXd y(m);
  for (Eigen::Index i = 0; i < m; ++i) {
    for (Eigen::Index j = 0; j < dd; ++j) X(i, j) = events[static_cast<std::size_t>(i)]->x[static_cast<std::size_t>(j)];
    y[i] = events[static_cast<std::size_t>(i)]->y;
  }
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(X);
  if (qr.rank() < dd)
    throw std::invalid_argument(
        "naive_ls: singular design among uncensored subjects; check for constant or collinear covariates");
  NaiveFit out;
  out.beta = qr.solve(y);
  const Eigen::VectorXd resid = y - X * out.beta;
  const double sigma2 = m > dd ? resid.squaredNorm() / static_cast<double>(m - dd) : 0.0;
  const Eigen::MatrixXd xtx_inv = (X.transpose() * X).inverse();
  out.se = (sigma2 * xtx_inv.diagonal()).cwiseMax(0.0).cwiseSqrt();
  return out;
}

/// beta ~ N(beta0, (noise_scale * se0)^2) componentwise, gamma ~ N(0, I).
inline std::vector<Theta> initial_points(const Eigen::VectorXd& beta0, const Eigen::VectorXd& se0,
                                         int basis_count, const FitConfig& config, Rng& rng) {
  std::vector<Theta> out;
  out.reserve(static_cast<std::size_t>(config.n_starts));
  for (int s = 0; s < config.n_starts; ++s) {
    Theta th{beta0, Eigen::VectorXd(basis_count)};
    for (Eigen::Index j = 0; j < beta0.size(); ++j)
      th.beta[j] += config.noise_scale * se0[j] * standard_normal(rng);
    for (Eigen::Index k = 0; k < basis_count; ++k) th.gamma[k] = standard_normal(rng);
    out.push_back(std::move(th));
  }
  return out;
}

enum class StopReason {
  gradient,   // score max-norm <= grad_tol
  decrement,  // line search stalled with Newton decrement <= decrement_tol
  stalled,
  max_iter,
  invalid,  // log-likelihood not finite at the start or after a step
};

inline std::string_view to_string(StopReason r) {
  switch (r) {
    case StopReason::gradient: return "gradient";
    case StopReason::decrement: return "decrement";
    case StopReason::stalled: return "stalled";
    case StopReason::max_iter: return "max_iter";
    case StopReason::invalid: return "invalid";
  }
  return "unknown";
}

struct MaximizeResult {
  Theta theta;
  double loglik = -std::numeric_limits<double>::infinity();
  bool converged = false;
  StopReason stop = StopReason::invalid;
  double decrement = std::numeric_limits<double>::quiet_NaN();  // at the last Newton step
  int iterations = 0;
  double score_norm = std::numeric_limits<double>::infinity();
  Diagnostics diagnostics;
  std::vector<double> loglik_path;  // start value, then one entry per accepted step
};

/// Ascent theta <- theta + step * direction. The diagonal direction is
/// D^{-1} score with D = |diag(hessian)| floored; in hybrid mode the full
/// Newton direction is used whenever -hessian admits a Cholesky factor. The
/// step starts at 1 and is shrunk until the log-likelihood strictly increases.
///
/// A spline coefficient whose support holds entry times but no events wants
/// to go to -infinity. It is held at gamma_floor instead, and leaves the
/// gradient test while its score points below the floor.
inline MaximizeResult maximize(const Theta& start, const Dataset& data, const BasisSpec& spec,
                               const FitConfig& config) {
  const Eigen::Index d = start.beta.size();
  MaximizeResult res;
  res.theta = start;
  const EvalLevel level =
      config.direction == SearchDirection::hybrid ? EvalLevel::full : EvalLevel::diagonal;
  Evaluation ev = evaluate(res.theta, data, spec, level);
  res.diagnostics += ev.diagnostics;
  if (!ev.valid()) return res;
  res.loglik = ev.loglik;
  res.loglik_path.push_back(res.loglik);

  Eigen::VectorXd packed = res.theta.packed();
  for (Eigen::Index j = d; j < packed.size(); ++j) packed[j] = std::max(packed[j], config.gamma_floor);
  if (packed != res.theta.packed()) {
    res.theta = Theta::unpack(packed, d);
    ev = evaluate(res.theta, data, spec, level);
    res.diagnostics += ev.diagnostics;
    if (!ev.valid()) return res;
    res.loglik = ev.loglik;
    res.loglik_path.back() = res.loglik;
  }
  std::vector<bool> held(static_cast<std::size_t>(packed.size()));
  for (;;) {
    res.score_norm = 0.0;
    for (Eigen::Index j = 0; j < packed.size(); ++j) {
      held[static_cast<std::size_t>(j)] = j >= d && packed[j] <= config.gamma_floor && ev.score[j] < 0.0;
      if (!held[static_cast<std::size_t>(j)]) res.score_norm = std::max(res.score_norm, std::abs(ev.score[j]));
    }
    if (res.score_norm <= config.grad_tol) {
      res.converged = true;
      res.stop = StopReason::gradient;
      break;
    }
    if (res.iterations >= config.max_iter) {
      res.stop = StopReason::max_iter;
      break;
    }

    Eigen::VectorXd direction;
    bool newton = false;
    if (config.direction == SearchDirection::hybrid) {
      // Coordinates held at the floor, or with neither curvature nor gradient
      // (e.g. an all-zero covariate), stay put; the rest take the Newton step.
      std::vector<Eigen::Index> active;
      for (Eigen::Index j = 0; j < ev.score.size(); ++j)
        if (!held[static_cast<std::size_t>(j)] && (ev.hessian(j, j) != 0.0 || ev.score[j] != 0.0))
          active.push_back(j);
      const auto m = static_cast<Eigen::Index>(active.size());
      // Solved in the unit-diagonal scaling; the spline block's curvature can
      // span many orders of magnitude.
      Eigen::MatrixXd neg(m, m);
      Eigen::VectorXd sub(m);
      Eigen::VectorXd scale(m);
      for (Eigen::Index a = 0; a < m; ++a) {
        const auto ia = active[static_cast<std::size_t>(a)];
        const double dg = -ev.hessian(ia, ia);
        scale[a] = dg > 0.0 ? 1.0 / std::sqrt(dg) : 1.0;
      }
      for (Eigen::Index a = 0; a < m; ++a) {
        sub[a] = scale[a] * ev.score[active[static_cast<std::size_t>(a)]];
        for (Eigen::Index b = 0; b < m; ++b)
          neg(a, b) = -scale[a] * scale[b] *
                      ev.hessian(active[static_cast<std::size_t>(a)], active[static_cast<std::size_t>(b)]);
      }
      Eigen::LLT<Eigen::MatrixXd> llt(neg);
      if (llt.info() == Eigen::Success) {
        const Eigen::VectorXd z = llt.solve(sub);
        const double dec = z.dot(sub);
        if (z.allFinite() && dec > 0.0) {
          direction = Eigen::VectorXd::Zero(ev.score.size());
          for (Eigen::Index a = 0; a < m; ++a) direction[active[static_cast<std::size_t>(a)]] = scale[a] * z[a];
          newton = true;
          res.decrement = dec;
        }
      }
    }
    if (direction.size() == 0) {
      const Eigen::VectorXd scale = ev.hessian.diagonal().cwiseAbs().cwiseMax(config.diag_floor);
      direction = ev.score.cwiseQuotient(scale);
      for (Eigen::Index j = 0; j < direction.size(); ++j)
        if (held[static_cast<std::size_t>(j)]) direction[j] = 0.0;
    }

    double step = 1.0;
    bool accepted = false;
    Eigen::VectorXd trial;
    double trial_ll = 0.0;
    for (int h = 0; h <= config.max_halvings; ++h, step *= config.step_shrink) {
      trial = packed + step * direction;
      for (Eigen::Index j = d; j < trial.size(); ++j) trial[j] = std::max(trial[j], config.gamma_floor);
      const Evaluation tv = evaluate(Theta::unpack(trial, d), data, spec, EvalLevel::value);
      res.diagnostics.clamped_evals += tv.diagnostics.clamped_evals;
      if (tv.valid() && tv.loglik > res.loglik) {
        accepted = true;
        trial_ll = tv.loglik;
        break;
      }
    }
    if (!accepted) {
      if (newton && res.decrement <= config.decrement_tol) {
        res.converged = true;
        res.stop = StopReason::decrement;
      } else {
        res.stop = StopReason::stalled;
      }
      break;
    }

    packed = std::move(trial);
    res.loglik = trial_ll;
    res.loglik_path.push_back(trial_ll);
    ++res.iterations;
    ev = evaluate(Theta::unpack(packed, d), data, spec, level);
    res.diagnostics += ev.diagnostics;
    if (!ev.valid()) {
      res.stop = StopReason::invalid;
      break;
    }
  }
  res.theta = Theta::unpack(packed, d);
  return res;
}

struct StartTrajectory {
  Theta initial;
  Theta final_theta;
  double loglik = -std::numeric_limits<double>::infinity();
  int iterations = 0;
  bool converged = false;
  StopReason stop = StopReason::invalid;
  double score_norm = std::numeric_limits<double>::infinity();
};

struct FitResult {
  Theta theta_hat;
  double loglik = -std::numeric_limits<double>::infinity();
  bool converged = false;
  /// Second-derivative matrix of the log-likelihood at theta_hat.
  Eigen::MatrixXd hessian;
  double score_norm = std::numeric_limits<double>::infinity();
  int converged_starts = 0;
  int winning_start = -1;
  std::vector<StartTrajectory> starts;
  BasisSpec basis;
  NaiveFit naive;
  Diagnostics diagnostics;
};

/// Spline domain from residuals at beta: [min - pad*range, max + pad*range]
/// over eps and the available tau.
inline std::pair<double, double> residual_domain(const Dataset& data, const Eigen::VectorXd& beta,
                                                 double pad) {
  double lo = std::numeric_limits<double>::infinity();
  double hi = -lo;
  for (const auto& o : data) {
    const double xb = linear_predictor(o, beta);
    lo = std::min(lo, o.y - xb);
    hi = std::max(hi, o.y - xb);
    if (o.t) {
      lo = std::min(lo, *o.t - xb);
      hi = std::max(hi, *o.t - xb);
    }
  }
  double range = hi - lo;
  if (!(range > 0.0)) range = 1.0;
  return {lo - pad * range, hi + pad * range};
}

inline BasisSpec make_basis(const Dataset& data, const Eigen::VectorXd& beta, int n_interior,
                            const FitConfig& config) {
  const auto [lo, hi] = residual_domain(data, beta, config.domain_pad);
  if (config.placement == KnotPlacement::equal) return build_basis(lo, hi, n_interior);
  std::vector<double> eps;
  eps.reserve(data.size());
  for (const auto& o : data) eps.push_back(o.y - linear_predictor(o, beta));
  return build_basis_quantile(lo, hi, n_interior, eps);
}

/// Fit on a fixed basis. Exposed for callers that control the domain.
inline FitResult fit_with_basis(const Dataset& data, const BasisSpec& basis, const NaiveFit& naive,
                                const FitConfig& config) {
  FitResult out;
  out.basis = basis;
  out.naive = naive;
  Rng rng = make_rng(config.seed, 0);
  const std::vector<Theta> starts = initial_points(naive.beta, naive.se, basis.basis_count(), config, rng);

  std::vector<MaximizeResult> runs(starts.size());
  parallel_for(starts.size(), config.threads,
               [&](std::size_t s) { runs[s] = maximize(starts[s], data, basis, config); });

  int best_conv = -1;
  int best_any = -1;
  for (std::size_t s = 0; s < runs.size(); ++s) {
    const auto& r = runs[s];
    out.diagnostics += r.diagnostics;
    out.starts.push_back({starts[s], r.theta, r.loglik, r.iterations, r.converged, r.stop, r.score_norm});
    const int si = static_cast<int>(s);
    if (r.converged) {
      ++out.converged_starts;
      if (best_conv < 0 || r.loglik > runs[static_cast<std::size_t>(best_conv)].loglik) best_conv = si;
    }
    if (std::isfinite(r.loglik) &&
        (best_any < 0 || r.loglik > runs[static_cast<std::size_t>(best_any)].loglik))
      best_any = si;
  }
  out.converged = best_conv >= 0;
  out.winning_start = out.converged ? best_conv : best_any;
  if (out.winning_start < 0) {
    out.theta_hat = starts.front();
    return out;
  }
  const MaximizeResult& win = runs[static_cast<std::size_t>(out.winning_start)];
  out.theta_hat = win.theta;
  const Evaluation ev = evaluate(out.theta_hat, data, basis, EvalLevel::full);
  out.loglik = ev.loglik;
  out.hessian = ev.hessian;
  out.score_norm = win.score_norm;
  return out;
}

inline FitResult fit(const Dataset& data, int n_interior, const FitConfig& config) {
  config.validate();
  validate_dataset(data);
  const NaiveFit naive = naive_ls(data);
  const BasisSpec basis = make_basis(data, naive.beta, n_interior, config);
  return fit_with_basis(data, basis, naive, config);
}

struct KnotCandidateScore {
  int n_interior = 0;
  bool ok = false;
  double mean_heldout_loglik = -std::numeric_limits<double>::infinity();
  std::string message;
};

struct KnotSelection {
  int selected = -1;
  std::vector<KnotCandidateScore> candidates;
};

/// K-fold cross-validation of the held-out sieve log-likelihood. Each fold fit
/// freezes its own training domain; held-out residuals outside it use the
/// constant extension.
inline KnotSelection select_knots_detailed(const Dataset& data, const std::vector<int>& candidates,
                                           int folds, const FitConfig& config) {
  if (candidates.empty()) throw std::invalid_argument("select_knots: no candidates");
  if (folds < 2) throw std::invalid_argument("select_knots: folds must be >= 2");
  validate_dataset(data);
  KnotSelection sel;
  if (candidates.size() == 1) {
    sel.selected = candidates.front();
    sel.candidates.push_back({candidates.front(), true, std::numeric_limits<double>::quiet_NaN(), "single candidate"});
    return sel;
  }

  std::vector<std::size_t> order(data.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng = make_rng(config.seed, 0xC0FFEE);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<int> fold_of(data.size());
  for (std::size_t i = 0; i < order.size(); ++i) fold_of[order[i]] = static_cast<int>(i % static_cast<std::size_t>(folds));

  std::vector<Dataset> train(static_cast<std::size_t>(folds));
  std::vector<Dataset> test(static_cast<std::size_t>(folds));
  for (std::size_t i = 0; i < data.size(); ++i)
    for (int f = 0; f < folds; ++f)
      (fold_of[i] == f ? test : train)[static_cast<std::size_t>(f)].push_back(data[i]);

  const std::size_t jobs = candidates.size() * static_cast<std::size_t>(folds);
  std::vector<double> heldout(jobs, std::numeric_limits<double>::quiet_NaN());
  std::vector<std::string> errors(jobs);
  FitConfig inner = config;
  inner.threads = 1;
  parallel_for(jobs, config.threads, [&](std::size_t job) {
    const std::size_t c = job / static_cast<std::size_t>(folds);
    const std::size_t f = job % static_cast<std::size_t>(folds);
    try {
      FitConfig cfg = inner;
      cfg.seed = derive_seed(config.seed, 1000 + f);
      const FitResult fr = fit(train[f], candidates[c], cfg);
      if (fr.winning_start < 0) throw std::runtime_error("no start produced a finite fit");
      const double ll = log_likelihood(fr.theta_hat, test[f], fr.basis);
      if (!std::isfinite(ll)) throw std::runtime_error("held-out log-likelihood is not finite");
      heldout[job] = ll;
    } catch (const std::exception& e) {
      errors[job] = e.what();
    }
  });

  double best = -std::numeric_limits<double>::infinity();
  for (std::size_t c = 0; c < candidates.size(); ++c) {
    KnotCandidateScore cs;
    cs.n_interior = candidates[c];
    cs.ok = true;
    double sum = 0.0;
    for (int f = 0; f < folds; ++f) {
      const std::size_t job = c * static_cast<std::size_t>(folds) + static_cast<std::size_t>(f);
      if (!errors[job].empty()) {
        cs.ok = false;
        cs.message = "fold " + std::to_string(f) + ": " + errors[job];
        break;
      }
      sum += heldout[job];
    }
    if (cs.ok) {
      cs.mean_heldout_loglik = sum / folds;
      // Ties go to fewer knots.
      if (cs.mean_heldout_loglik > best ||
          (cs.mean_heldout_loglik == best && cs.n_interior < sel.selected)) {
        best = cs.mean_heldout_loglik;
        sel.selected = cs.n_interior;
      }
    }
    sel.candidates.push_back(std::move(cs));
  }
  if (sel.selected < 0) throw std::runtime_error("select_knots: every candidate failed");
  return sel;
}

inline int select_knots(const Dataset& data, const std::vector<int>& candidates, int folds,
                        const FitConfig& config) {
  return select_knots_detailed(data, candidates, folds, config).selected;
}

}  // namespace ltrc
