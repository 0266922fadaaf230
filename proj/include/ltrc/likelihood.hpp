#pragma once

// Sieve log-likelihood for left-truncated, right-censored linear regression
// with the error log-hazard g(u) = sum_k gamma_k B_k(u):
//
//   l(beta, gamma) = sum_i [ delta_i g(eps_i) - int_{tau_i}^{eps_i} exp{g(u)} du ]
//
// with eps_i = y_i - x_i'beta and tau_i = t_i - x_i'beta. Subjects without a
// truncation time integrate from the fixed lower end of the spline domain.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <stdexcept>

#include <Eigen/Dense>

#include "ltrc/model.hpp"
#include "ltrc/spline_basis.hpp"

namespace ltrc {

inline constexpr double kExpCap = 700.0;

struct Diagnostics {
  std::size_t clamped_evals = 0;  // basis evaluated outside [lo, hi]
  std::size_t exp_capped = 0;     // exp argument exceeded kExpCap

  Diagnostics& operator+=(const Diagnostics& o) {
    clamped_evals += o.clamped_evals;
    exp_capped += o.exp_capped;
    return *this;
  }
};

enum class EvalLevel {
  value,     // log-likelihood only
  gradient,  // + score
  diagonal,  // + diagonal of the second-derivative matrix
  full,      // + full second-derivative matrix
};

struct Evaluation {
  double loglik = 0.0;
  Eigen::VectorXd score;
  /// Second-derivative matrix of the log-likelihood (negative definite near a
  /// maximum). For EvalLevel::diagonal only the diagonal is filled.
  Eigen::MatrixXd hessian;
  Diagnostics diagnostics;

  bool valid() const { return diagnostics.exp_capped == 0 && std::isfinite(loglik); }
};

class EvaluationFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

inline double capped_exp(double v, Diagnostics& diag) {
  if (v > kExpCap) {
    ++diag.exp_capped;
    v = kExpCap;
  }
  return std::exp(v);
}

struct PointValues {
  LocalBasis basis;
  double g = 0.0;
  double g1 = 0.0;
  double g2 = 0.0;
};

inline PointValues point_values(const BasisSpec& spec, const Eigen::VectorXd& gamma, double s,
                                int order, Diagnostics& diag) {
  PointValues p;
  p.basis = eval_local(spec, s, order);
  if (p.basis.clamped) ++diag.clamped_evals;
  for (int j = 0; j < kSplineOrder; ++j) {
    const double gk = gamma[p.basis.first + j];
    const auto ju = static_cast<std::size_t>(j);
    p.g += gk * p.basis.value[ju];
    if (order >= 1) p.g1 += gk * p.basis.d1[ju];
    if (order >= 2) p.g2 += gk * p.basis.d2[ju];
  }
  return p;
}

// Gauss-Legendre with 16 nodes integrates exp{g} to rounding accuracy while g
// changes by at most about 16 across the interval. Steeper pieces are bisected
// unless exp{g} stays below e^-40 on them.
inline constexpr double kMaxRisePerPart = 16.0;
inline constexpr double kNegligibleLog = -40.0;
inline constexpr int kMaxBisections = 24;

inline double cubic(const double (&c)[kSplineOrder], double h) {
  return ((c[3] * h + c[2]) * h + c[1]) * h + c[0];
}

// Calls visit(h0, h1) on sub-intervals of [h0, h1] that GL16 handles for the
// cubic g(h) = sum_m c[m] h^m.
template <class Visit>
void adaptive_parts(const double (&c)[kSplineOrder], double h0, double h1, Visit&& visit, int depth = 0) {
  auto slope = [&](double h) { return (3.0 * c[3] * h + 2.0 * c[2]) * h + c[1]; };
  double steepest = std::max(std::abs(slope(h0)), std::abs(slope(h1)));
  double g_max = std::max(cubic(c, h0), cubic(c, h1));
  if (c[3] != 0.0) {
    const double vertex = -c[2] / (3.0 * c[3]);
    if (vertex > h0 && vertex < h1) steepest = std::max(steepest, std::abs(slope(vertex)));
    const double disc = c[2] * c[2] - 3.0 * c[3] * c[1];
    if (disc >= 0.0) {
      const double r = std::sqrt(disc);
      for (double h : {(-c[2] + r) / (3.0 * c[3]), (-c[2] - r) / (3.0 * c[3])})
        if (h > h0 && h < h1) g_max = std::max(g_max, cubic(c, h));
    }
  } else if (c[2] != 0.0) {
    const double h = -c[1] / (2.0 * c[2]);
    if (h > h0 && h < h1) g_max = std::max(g_max, cubic(c, h));
  }
  if (steepest * (h1 - h0) <= kMaxRisePerPart || g_max < kNegligibleLog || depth >= kMaxBisections ||
      !(g_max <= kExpCap)) {
    visit(h0, h1);
    return;
  }
  const double mid = 0.5 * (h0 + h1);
  adaptive_parts(c, h0, mid, visit, depth + 1);
  adaptive_parts(c, mid, h1, visit, depth + 1);
}

}  // namespace detail

/// Log-likelihood and, depending on `level`, its gradient and second
/// derivatives. Parameter order is (beta, gamma).
inline Evaluation evaluate(const Theta& theta, const Dataset& data, const BasisSpec& spec,
                           EvalLevel level = EvalLevel::full) {
  const Eigen::Index d = theta.beta.size();
  const Eigen::Index K = theta.gamma.size();
  if (K != spec.basis_count())
    throw std::invalid_argument("evaluate: gamma length does not match basis count");
  const Eigen::Index p = d + K;
  const bool want_grad = level != EvalLevel::value;
  const bool want_diag = level == EvalLevel::diagonal || level == EvalLevel::full;
  const bool want_full = level == EvalLevel::full;
  const int order = want_diag ? 2 : (want_grad ? 1 : 0);

  Evaluation ev;
  Diagnostics& diag = ev.diagnostics;
  if (want_grad) ev.score = Eigen::VectorXd::Zero(p);
  if (want_diag) ev.hessian = Eigen::MatrixXd::Zero(p, p);

  Eigen::VectorXd x(d);
  Eigen::VectorXd bg_score(K);     // d score_beta / d gamma contribution per subject
  std::array<double, kSplineOrder * kSplineOrder> local_kl{};
  Eigen::VectorXd int_bk(K);
  Eigen::MatrixXd int_bkl(K, K);

  double loglik = 0.0;
  const Eigen::VectorXd& gamma = theta.gamma;

  for (const Observation& obs : data) {
    for (Eigen::Index j = 0; j < d; ++j) x[j] = obs.x[static_cast<std::size_t>(j)];
    const double xb = x.dot(theta.beta);
    const double eps = obs.y - xb;
    const bool truncated = obs.t.has_value();
    const double tau = truncated ? *obs.t - xb : spec.lo();

    // Integral of exp{g}, B_k exp{g}, B_k B_l exp{g} over [tau, eps], oriented.
    const double lo = std::min(tau, eps);
    const double hi = std::max(tau, eps);
    const double sign = eps >= tau ? 1.0 : -1.0;
    double int0 = 0.0;
    if (want_grad) int_bk.setZero();
    if (want_diag) int_bkl.setZero();
    for_each_piece(spec, lo, hi, [&](double a, double b, int span) {
      const GaussLegendre& gl = gauss_legendre16();
      if (span < 0 || span >= spec.span_count()) {
        // Constant extension: one basis function equal to 1.
        diag.clamped_evals += kQuadraturePoints;
        const Eigen::Index k = span < 0 ? 0 : K - 1;
        const double e = detail::capped_exp(gamma[k], diag) * (b - a);
        int0 += e;
        if (want_grad) int_bk[k] += e;
        if (want_diag) int_bkl(k, k) += e;
        return;
      }
      local_kl.fill(0.0);
      std::array<double, kSplineOrder> local_k{};
      std::array<double, kSplineOrder> bval{};
      const SpanPolynomial& poly = spec.span_polynomial(span);
      // g on this span as a cubic in (u - center).
      double gc[kSplineOrder] = {};
      for (int j = 0; j < kSplineOrder; ++j)
        for (int m = 0; m < kSplineOrder; ++m) gc[m] += gamma[span + j] * poly.coef[j][m];
      double piece0 = 0.0;
      detail::adaptive_parts(gc, a - poly.center, b - poly.center, [&](double h0, double h1) {
        const double half = 0.5 * (h1 - h0);
        const double mid = poly.center + 0.5 * (h0 + h1);
        for (int q = 0; q < kQuadraturePoints; ++q) {
          const auto qi = static_cast<std::size_t>(q);
          const double u = mid + half * gl.node[qi];
          const double we = half * gl.weight[qi] * detail::capped_exp(detail::cubic(gc, u - poly.center), diag);
          piece0 += we;
          if (want_grad) {
            poly.values(u, bval);
            for (int j = 0; j < kSplineOrder; ++j) {
              const double wb = we * bval[static_cast<std::size_t>(j)];
              local_k[static_cast<std::size_t>(j)] += wb;
              if (want_diag) {
                for (int l = j; l < kSplineOrder; ++l)
                  local_kl[static_cast<std::size_t>(j * kSplineOrder + l)] +=
                      wb * bval[static_cast<std::size_t>(l)];
              }
            }
          }
        }
      });
      int0 += piece0;
      if (want_grad)
        for (int j = 0; j < kSplineOrder; ++j) int_bk[span + j] += local_k[static_cast<std::size_t>(j)];
      if (want_diag) {
        for (int j = 0; j < kSplineOrder; ++j) {
          for (int l = j; l < kSplineOrder; ++l) {
            const double v = local_kl[static_cast<std::size_t>(j * kSplineOrder + l)];
            if (want_full || l == j) {
              int_bkl(span + j, span + l) += v;
              if (l != j) int_bkl(span + l, span + j) += v;
            }
          }
        }
      }
    });

    const detail::PointValues pe = detail::point_values(spec, gamma, eps, order, diag);
    loglik += (obs.delta ? pe.g : 0.0) - sign * int0;
    if (!want_grad) continue;

    const double exp_eps = detail::capped_exp(pe.g, diag);
    detail::PointValues pt;
    double exp_tau = 0.0;
    if (truncated) {
      pt = detail::point_values(spec, gamma, tau, order, diag);
      exp_tau = detail::capped_exp(pt.g, diag);
    }

    // Score.
    const double beta_factor = -obs.delta * pe.g1 + exp_eps - exp_tau;
    ev.score.head(d) += beta_factor * x;
    ev.score.tail(K) -= sign * int_bk;
    if (obs.delta)
      for (int j = 0; j < kSplineOrder; ++j)
        ev.score[d + pe.basis.first + j] += pe.basis.value[static_cast<std::size_t>(j)];

    if (!want_diag) continue;

    // beta-beta block.
    const double bb = obs.delta * pe.g2 - exp_eps * pe.g1 + (truncated ? exp_tau * pt.g1 : 0.0);
    if (want_full) {
      ev.hessian.topLeftCorner(d, d).noalias() += bb * x * x.transpose();
    } else {
      for (Eigen::Index j = 0; j < d; ++j) ev.hessian(j, j) += bb * x[j] * x[j];
    }

    // gamma-gamma block.
    if (want_full) {
      ev.hessian.bottomRightCorner(K, K) -= sign * int_bkl;
    } else {
      for (Eigen::Index k = 0; k < K; ++k) ev.hessian(d + k, d + k) -= sign * int_bkl(k, k);
    }

    // beta-gamma block.
    if (want_full) {
      bg_score.setZero();
      for (int j = 0; j < kSplineOrder; ++j) {
        const auto ju = static_cast<std::size_t>(j);
        bg_score[pe.basis.first + j] += -obs.delta * pe.basis.d1[ju] + pe.basis.value[ju] * exp_eps;
        if (truncated) bg_score[pt.basis.first + j] -= pt.basis.value[ju] * exp_tau;
      }
      ev.hessian.topRightCorner(d, K).noalias() += x * bg_score.transpose();
    }
  }
  if (want_full) ev.hessian.bottomLeftCorner(K, d) = ev.hessian.topRightCorner(d, K).transpose();

  ev.loglik = loglik;
  if (ev.diagnostics.exp_capped > 0) ev.loglik = -std::numeric_limits<double>::infinity();
  return ev;
}

/// Returns -infinity when an exp argument overflows the cap.
inline double log_likelihood(const Theta& theta, const Dataset& data, const BasisSpec& spec) {
  return evaluate(theta, data, spec, EvalLevel::value).loglik;
}

inline Eigen::VectorXd score(const Theta& theta, const Dataset& data, const BasisSpec& spec) {
  Evaluation ev = evaluate(theta, data, spec, EvalLevel::gradient);
  if (!ev.valid()) throw EvaluationFailure("score: exp overflow at this parameter value");
  return std::move(ev.score);
}

/// Observed sieve information in second-derivative form (the Hessian of the
/// log-likelihood); negate for the positive-definite version.
inline Eigen::MatrixXd information(const Theta& theta, const Dataset& data, const BasisSpec& spec) {
  Evaluation ev = evaluate(theta, data, spec, EvalLevel::full);
  if (!ev.valid()) throw EvaluationFailure("information: exp overflow at this parameter value");
  return std::move(ev.hessian);
}

}  // namespace ltrc
