#pragma once

// Variance estimation for the regression coefficients:
//   Var1 - inverse empirical second moment of the plug-in efficient scores
//          l_i = int (X_i - Xbar(s)) (-g'(s)) dM_i(s)
//   Var2 - beta block of the inverse of the negated observed information.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "ltrc/likelihood.hpp"
#include "ltrc/model.hpp"
#include "ltrc/spline_basis.hpp"

namespace ltrc {

inline constexpr double kConditionThreshold = 1e12;
/// Spline curvature below this fraction of the largest counts as none.
inline constexpr double kInertCurvature = 1e-10;

/// Fitted log-hazard g(s) = sum_k gamma_k B_k(s) and its derivative, with the
/// constant extension outside the spline domain.
inline double fitted_log_hazard(const BasisSpec& spec, const Eigen::VectorXd& gamma, double s) {
  const LocalBasis lb = eval_local(spec, s, 0);
  double g = 0.0;
  for (int j = 0; j < kSplineOrder; ++j) g += gamma[lb.first + j] * lb.value[static_cast<std::size_t>(j)];
  return g;
}

inline double fitted_log_hazard_slope(const BasisSpec& spec, const Eigen::VectorXd& gamma, double s) {
  const LocalBasis lb = eval_local(spec, s, 1);
  double g = 0.0;
  for (int j = 0; j < kSplineOrder; ++j) g += gamma[lb.first + j] * lb.d1[static_cast<std::size_t>(j)];
  return g;
}

namespace detail {

inline double tau_or_lo(const Residual& r, const BasisSpec& spec) { return r.tau ? *r.tau : spec.lo(); }

}  // namespace detail

/// Mean covariate over the risk set {i : eps_i >= s, tau_i <= s}; untruncated
/// subjects use the lower end of the spline domain as tau. Empty risk set
/// gives nullopt.
inline std::optional<Eigen::VectorXd> xbar(double s, const Theta& theta, const Dataset& data,
                                           const BasisSpec& spec) {
  const Eigen::Index d = theta.beta.size();
  Eigen::VectorXd sum = Eigen::VectorXd::Zero(d);
  std::size_t count = 0;
  for (const auto& o : data) {
    const Residual r = residuals(theta, o);
    if (r.eps >= s && detail::tau_or_lo(r, spec) <= s) {
      for (Eigen::Index j = 0; j < d; ++j) sum[j] += o.x[static_cast<std::size_t>(j)];
      ++count;
    }
  }
  if (count == 0) return std::nullopt;
  return Eigen::VectorXd(sum / static_cast<double>(count));
}

/// Per-subject plug-in efficient scores, one row per subject.
///
/// The jump part is delta_i (x_i - Xbar(eps_i)) (-g'(eps_i)). For the
/// compensator, Xbar is constant between consecutive residual values, and
/// (-g') exp{g} = -(exp{g})', so on each elementary interval [b_j, b_{j+1}]
/// the integral equals (x_i - Xbar_j) (exp{g(b_j)} - exp{g(b_{j+1})}).
inline Eigen::MatrixXd efficient_scores(const Theta& theta, const Dataset& data, const BasisSpec& spec) {
  const Eigen::Index d = theta.beta.size();
  const std::size_t n = data.size();
  const Eigen::VectorXd& gamma = theta.gamma;

  std::vector<double> eps(n);
  std::vector<double> tau(n);
  Eigen::MatrixXd X(static_cast<Eigen::Index>(n), d);
  for (std::size_t i = 0; i < n; ++i) {
    const Residual r = residuals(theta, data[i]);
    eps[i] = r.eps;
    tau[i] = detail::tau_or_lo(r, spec);
    for (Eigen::Index j = 0; j < d; ++j) X(static_cast<Eigen::Index>(i), j) = data[i].x[static_cast<std::size_t>(j)];
  }

  // Elementary intervals between all residual values.
  std::vector<double> breaks;
  breaks.reserve(2 * n);
  for (std::size_t i = 0; i < n; ++i)
    if (eps[i] > tau[i]) {
      breaks.push_back(eps[i]);
      breaks.push_back(tau[i]);
    }
  std::sort(breaks.begin(), breaks.end());
  breaks.erase(std::unique(breaks.begin(), breaks.end()), breaks.end());
  const std::size_t m = breaks.size();

  std::vector<double> exp_g(m);
  for (std::size_t j = 0; j < m; ++j) exp_g[j] = std::exp(fitted_log_hazard(spec, gamma, breaks[j]));

  // Risk-set sweep: a subject is at risk on [b_j, b_{j+1}] iff tau <= b_j and eps >= b_{j+1}.
  std::vector<std::size_t> by_tau;
  std::vector<std::size_t> by_eps;
  for (std::size_t i = 0; i < n; ++i)
    if (eps[i] > tau[i]) {
      by_tau.push_back(i);
      by_eps.push_back(i);
    }
  std::sort(by_tau.begin(), by_tau.end(), [&](std::size_t a, std::size_t b) { return tau[a] < tau[b]; });
  std::sort(by_eps.begin(), by_eps.end(), [&](std::size_t a, std::size_t b) { return eps[a] < eps[b]; });

  // prefix[j] = sum_{l < j} Xbar_l (exp_g[l] - exp_g[l+1]); prefix over breakpoints.
  Eigen::MatrixXd prefix = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(m), d);
  Eigen::VectorXd risk_sum = Eigen::VectorXd::Zero(d);
  std::size_t risk_count = 0;
  std::size_t ti = 0;
  std::size_t ei = 0;
  for (std::size_t j = 0; j + 1 < m; ++j) {
    while (ti < by_tau.size() && tau[by_tau[ti]] <= breaks[j]) {
      risk_sum += X.row(static_cast<Eigen::Index>(by_tau[ti])).transpose();
      ++risk_count;
      ++ti;
    }
    while (ei < by_eps.size() && eps[by_eps[ei]] <= breaks[j]) {
      risk_sum -= X.row(static_cast<Eigen::Index>(by_eps[ei])).transpose();
      --risk_count;
      ++ei;
    }
    Eigen::VectorXd inc = Eigen::VectorXd::Zero(d);
    if (risk_count > 0) inc = risk_sum / static_cast<double>(risk_count) * (exp_g[j] - exp_g[j + 1]);
    prefix.row(static_cast<Eigen::Index>(j + 1)) = prefix.row(static_cast<Eigen::Index>(j)) + inc.transpose();
  }

  auto index_of = [&](double v) {
    return static_cast<Eigen::Index>(std::lower_bound(breaks.begin(), breaks.end(), v) - breaks.begin());
  };

  Eigen::MatrixXd scores = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n), d);
  for (std::size_t i = 0; i < n; ++i) {
    const auto ii = static_cast<Eigen::Index>(i);
    const Eigen::VectorXd xi = X.row(ii).transpose();
    Eigen::VectorXd li = Eigen::VectorXd::Zero(d);
    if (data[i].delta == 1 && eps[i] >= tau[i]) {
      const auto xb = xbar(eps[i], theta, data, spec);
      if (xb) li += (xi - *xb) * (-fitted_log_hazard_slope(spec, gamma, eps[i]));
    }
    if (eps[i] > tau[i]) {
      const Eigen::Index a = index_of(tau[i]);
      const Eigen::Index b = index_of(eps[i]);
      const double total = exp_g[static_cast<std::size_t>(a)] - exp_g[static_cast<std::size_t>(b)];
      li -= xi * total - (prefix.row(b) - prefix.row(a)).transpose();
    }
    scores.row(ii) = li.transpose();
  }
  return scores;
}

struct SpdInverse {
  Eigen::MatrixXd inverse;
  double condition = 0.0;  // after diagonal equilibration
  bool pseudo = false;
};

/// Inverse of a symmetric positive semidefinite matrix after symmetric
/// diagonal equilibration; eigenvalues below max / threshold are dropped.
inline SpdInverse invert_spd(const Eigen::MatrixXd& a, double threshold = kConditionThreshold) {
  const Eigen::Index p = a.rows();
  Eigen::VectorXd scale(p);
  for (Eigen::Index j = 0; j < p; ++j) {
    const double v = a(j, j);
    scale[j] = (v > 0.0 && std::isfinite(v)) ? 1.0 / std::sqrt(v) : 1.0;
  }
  const Eigen::MatrixXd s = scale.asDiagonal() * a * scale.asDiagonal();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (s + s.transpose()));
  const Eigen::VectorXd ev = es.eigenvalues();
  const double top = ev.cwiseAbs().maxCoeff();
  SpdInverse out;
  const double bottom = ev.minCoeff();
  out.condition = bottom > 0.0 ? top / bottom : std::numeric_limits<double>::infinity();
  Eigen::VectorXd inv_ev = Eigen::VectorXd::Zero(p);
  for (Eigen::Index j = 0; j < p; ++j) {
    if (ev[j] > top / threshold) {
      inv_ev[j] = 1.0 / ev[j];
    } else {
      out.pseudo = true;
    }
  }
  const Eigen::MatrixXd sinv = es.eigenvectors() * inv_ev.asDiagonal() * es.eigenvectors().transpose();
  out.inverse = scale.asDiagonal() * sinv * scale.asDiagonal();
  out.inverse = 0.5 * (out.inverse + out.inverse.transpose());
  return out;
}

struct InferenceReport {
  Eigen::MatrixXd var1;
  Eigen::MatrixXd var2;
  Eigen::VectorXd estimate;
  Eigen::VectorXd ci_lo;
  Eigen::VectorXd ci_hi;
  Eigen::VectorXd p_values;
  double var1_condition = 0.0;
  double info_condition = 0.0;
  /// Smallest eigenvalue of the equilibrated negated information; a
  /// non-positive value flags a fit that is not locally concave.
  double info_min_eigenvalue = 0.0;
  std::vector<std::string> notes;
};

inline double normal_two_sided_p(double z) { return std::erfc(std::abs(z) / std::sqrt(2.0)); }

/// `hessian` is the second-derivative matrix of the log-likelihood at theta;
/// `scores` holds one efficient score per row.
inline InferenceReport variance_estimates(const Theta& theta, const Eigen::MatrixXd& hessian,
                                          const Eigen::MatrixXd& scores) {
  const Eigen::Index d = theta.beta.size();
  InferenceReport rep;
  rep.estimate = theta.beta;

  const Eigen::MatrixXd second_moment = scores.transpose() * scores;
  const SpdInverse v1 = invert_spd(second_moment);
  rep.var1 = v1.inverse;
  rep.var1_condition = v1.condition;
  if (v1.pseudo) rep.notes.push_back("var1: efficient-score second moment is near-singular; pseudo-inverse used");

  // Spline coefficients with next to no curvature (e.g. over a stretch that
  // no subject's risk interval reaches) are held fixed; scaling them up to
  // unit diagonal would only amplify rounding noise.
  const Eigen::MatrixXd full = -0.5 * (hessian + hessian.transpose());
  double spline_top = 0.0;
  for (Eigen::Index j = d; j < full.rows(); ++j) spline_top = std::max(spline_top, std::abs(full(j, j)));
  std::vector<Eigen::Index> keep;
  for (Eigen::Index j = 0; j < full.rows(); ++j)
    if (j < d || std::abs(full(j, j)) > kInertCurvature * spline_top) keep.push_back(j);
  const auto m = static_cast<Eigen::Index>(keep.size());
  Eigen::MatrixXd neg_info(m, m);
  for (Eigen::Index a = 0; a < m; ++a)
    for (Eigen::Index b = 0; b < m; ++b)
      neg_info(a, b) = full(keep[static_cast<std::size_t>(a)], keep[static_cast<std::size_t>(b)]);
  if (m < full.rows())
    rep.notes.push_back("var2: " + std::to_string(full.rows() - m) +
                        " spline coefficients with negligible information held fixed");

  const SpdInverse v2 = invert_spd(neg_info);
  rep.var2 = v2.inverse.topLeftCorner(d, d);
  rep.info_condition = v2.condition;
  if (v2.pseudo) rep.notes.push_back("var2: information matrix is near-singular; pseudo-inverse used");
  {
    Eigen::VectorXd scale(neg_info.rows());
    for (Eigen::Index j = 0; j < scale.size(); ++j) {
      const double v = neg_info(j, j);
      scale[j] = v > 0.0 ? 1.0 / std::sqrt(v) : 1.0;
    }
    const Eigen::MatrixXd s = scale.asDiagonal() * neg_info * scale.asDiagonal();
    rep.info_min_eigenvalue = Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(s, Eigen::EigenvaluesOnly).eigenvalues()[0];
    if (!(rep.info_min_eigenvalue > 0.0))
      rep.notes.push_back("negated information is not positive definite at the estimate");
  }

  rep.ci_lo.resize(d);
  rep.ci_hi.resize(d);
  rep.p_values.resize(d);
  for (Eigen::Index j = 0; j < d; ++j) {
    const double se = std::sqrt(std::max(rep.var2(j, j), 0.0));
    rep.ci_lo[j] = theta.beta[j] - 1.96 * se;
    rep.ci_hi[j] = theta.beta[j] + 1.96 * se;
    rep.p_values[j] = se > 0.0 ? normal_two_sided_p(theta.beta[j] / se) : 0.0;
  }
  return rep;
}

/// Efficient scores and both variance estimates at a fitted theta.
inline InferenceReport infer(const Theta& theta, const Dataset& data, const BasisSpec& spec,
                             const Eigen::MatrixXd& hessian) {
  return variance_estimates(theta, hessian, efficient_scores(theta, data, spec));
}

}  // namespace ltrc
