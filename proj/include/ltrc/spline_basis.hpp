#pragma once

// Cubic B-spline basis on a bounded interval [lo, hi] with clamped
// (4-fold) boundary knots, plus composite Gauss-Legendre quadrature over the
// inter-knot spans.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace ltrc {

inline constexpr int kSplineDegree = 3;
inline constexpr int kSplineOrder = kSplineDegree + 1;
inline constexpr int kQuadraturePoints = 16;

namespace detail {

// Nonzero basis functions and their derivatives up to `order` (<= 3) on knot
// span mu of the full knot vector (U[mu] <= s < U[mu+1]): ders[k][j] is the
// k-th derivative of basis function mu - 3 + j.
inline void basis_derivatives(const std::vector<double>& U, int mu, double s, int order,
                              double (&ders)[kSplineOrder][kSplineOrder]) {
  constexpr int p = kSplineDegree;
  double ndu[p + 1][p + 1];
  double left[p + 1];
  double right[p + 1];
  ndu[0][0] = 1.0;
  for (int j = 1; j <= p; ++j) {
    left[j] = s - U[static_cast<std::size_t>(mu + 1 - j)];
    right[j] = U[static_cast<std::size_t>(mu + j)] - s;
    double saved = 0.0;
    for (int r = 0; r < j; ++r) {
      ndu[j][r] = right[r + 1] + left[j - r];
      const double temp = ndu[r][j - 1] / ndu[j][r];
      ndu[r][j] = saved + right[r + 1] * temp;
      saved = left[j - r] * temp;
    }
    ndu[j][j] = saved;
  }
  for (int j = 0; j <= p; ++j) ders[0][j] = ndu[j][p];
  if (order == 0) return;

  double a[2][p + 1];
  for (int r = 0; r <= p; ++r) {
    int s1 = 0;
    int s2 = 1;
    a[0][0] = 1.0;
    for (int k = 1; k <= order; ++k) {
      double d = 0.0;
      const int rk = r - k;
      const int pk = p - k;
      if (r >= k) {
        a[s2][0] = a[s1][0] / ndu[pk + 1][rk];
        d = a[s2][0] * ndu[rk][pk];
      }
      const int j1 = rk >= -1 ? 1 : -rk;
      const int j2 = (r - 1 <= pk) ? k - 1 : p - r;
      for (int j = j1; j <= j2; ++j) {
        a[s2][j] = (a[s1][j] - a[s1][j - 1]) / ndu[pk + 1][rk + j];
        d += a[s2][j] * ndu[rk + j][pk];
      }
      if (r <= pk) {
        a[s2][k] = -a[s1][k - 1] / ndu[pk + 1][r];
        d += a[s2][k] * ndu[r][pk];
      }
      ders[k][r] = d;
      std::swap(s1, s2);
    }
  }
  double scale = p;
  for (int k = 1; k <= order; ++k) {
    for (int j = 0; j <= p; ++j) ders[k][j] *= scale;
    scale *= (p - k);
  }
}

}  // namespace detail

/// The four basis functions that are nonzero on one span, as cubic
/// polynomials in (u - center): B_{span+j}(u) = sum_m coef[j][m] (u - center)^m.
struct SpanPolynomial {
  double center = 0.0;
  double coef[kSplineOrder][kSplineOrder] = {};

  void values(double u, std::array<double, kSplineOrder>& out) const {
    const double h = u - center;
    for (int j = 0; j < kSplineOrder; ++j)
      out[static_cast<std::size_t>(j)] = ((coef[j][3] * h + coef[j][2]) * h + coef[j][1]) * h + coef[j][0];
  }
};

/// Knot configuration for a cubic B-spline basis.
///
/// Spans are numbered 0..span_count()-1 between consecutive breakpoints
/// (lo, interior knots..., hi). Two pseudo-spans describe the region where the
/// basis is extended constantly: kBelow for s < lo and span_count() for s > hi.
class BasisSpec {
 public:
  static constexpr int kBelow = -1;

  BasisSpec() = default;

  BasisSpec(double lo, double hi, std::vector<double> interior)
      : lo_(lo), hi_(hi), interior_(std::move(interior)) {
    if (!std::isfinite(lo_) || !std::isfinite(hi_))
      throw std::invalid_argument("spline domain must be finite");
    if (!(lo_ < hi_))
      throw std::invalid_argument("spline domain must satisfy lo < hi");
    double prev = lo_;
    for (double k : interior_) {
      if (!std::isfinite(k) || !(k > prev))
        throw std::invalid_argument(
            "interior knots must be finite, strictly increasing and inside (lo, hi)");
      prev = k;
    }
    if (!(hi_ > prev))
      throw std::invalid_argument("interior knots must lie strictly below hi");

    breaks_.reserve(interior_.size() + 2);
    breaks_.push_back(lo_);
    breaks_.insert(breaks_.end(), interior_.begin(), interior_.end());
    breaks_.push_back(hi_);

    knots_.assign(kSplineOrder, lo_);
    knots_.insert(knots_.end(), interior_.begin(), interior_.end());
    knots_.insert(knots_.end(), kSplineOrder, hi_);

    polys_.resize(breaks_.size() - 1);
    for (std::size_t sp = 0; sp < polys_.size(); ++sp) {
      SpanPolynomial& poly = polys_[sp];
      poly.center = 0.5 * (breaks_[sp] + breaks_[sp + 1]);
      double ders[kSplineOrder][kSplineOrder];
      detail::basis_derivatives(knots_, static_cast<int>(sp) + kSplineDegree, poly.center, 3, ders);
      for (int j = 0; j < kSplineOrder; ++j) {
        poly.coef[j][0] = ders[0][j];
        poly.coef[j][1] = ders[1][j];
        poly.coef[j][2] = ders[2][j] / 2.0;
        poly.coef[j][3] = ders[3][j] / 6.0;
      }
    }
  }

  double lo() const { return lo_; }
  double hi() const { return hi_; }
  const std::vector<double>& interior_knots() const { return interior_; }
  int interior_count() const { return static_cast<int>(interior_.size()); }
  int basis_count() const { return interior_count() + kSplineOrder; }
  int span_count() const { return interior_count() + 1; }

  /// lo, interior knots, hi.
  const std::vector<double>& breakpoints() const { return breaks_; }
  /// Full knot vector with repeated boundary knots; length basis_count() + 4.
  const std::vector<double>& knot_vector() const { return knots_; }

  /// Span containing s; s == hi belongs to the last span.
  int span_of(double s) const {
    if (s < lo_) return kBelow;
    if (s > hi_) return span_count();
    auto it = std::upper_bound(breaks_.begin() + 1, breaks_.end() - 1, s);
    return static_cast<int>(it - breaks_.begin()) - 1;
  }

  double span_lo(int span) const { return breaks_[static_cast<std::size_t>(span)]; }
  double span_hi(int span) const { return breaks_[static_cast<std::size_t>(span) + 1]; }

  /// Power-form representation of the basis on a regular span.
  const SpanPolynomial& span_polynomial(int span) const { return polys_[static_cast<std::size_t>(span)]; }

 private:
  double lo_ = 0.0;
  double hi_ = 1.0;
  std::vector<double> interior_;
  std::vector<double> breaks_;
  std::vector<double> knots_;
  std::vector<SpanPolynomial> polys_;
};

/// Equally spaced interior knots: lo + j (hi - lo) / (n + 1), j = 1..n.
inline BasisSpec build_basis(double lo, double hi, int n_interior) {
  if (!std::isfinite(lo) || !std::isfinite(hi) || !(lo < hi))
    throw std::invalid_argument("build_basis: domain must be finite with lo < hi");
  if (n_interior < 0) throw std::invalid_argument("build_basis: n_interior must be >= 0");
  std::vector<double> knots;
  knots.reserve(static_cast<std::size_t>(n_interior));
  const double step = (hi - lo) / (n_interior + 1);
  for (int j = 1; j <= n_interior; ++j) knots.push_back(lo + j * step);
  return BasisSpec(lo, hi, std::move(knots));
}

/// Interior knots at the j/(n+1) empirical quantiles of `values`. Duplicate or
/// boundary-touching quantiles fall back to equal spacing.
inline BasisSpec build_basis_quantile(double lo, double hi, int n_interior,
                                      std::span<const double> values) {
  if (values.empty()) return build_basis(lo, hi, n_interior);
  std::vector<double> sorted(values.begin(), values.end());
  std::sort(sorted.begin(), sorted.end());
  std::vector<double> knots;
  for (int j = 1; j <= n_interior; ++j) {
    const double p = static_cast<double>(j) / (n_interior + 1);
    const double pos = p * static_cast<double>(sorted.size() - 1);
    const auto i0 = static_cast<std::size_t>(std::floor(pos));
    const std::size_t i1 = std::min(i0 + 1, sorted.size() - 1);
    const double q = sorted[i0] + (pos - static_cast<double>(i0)) * (sorted[i1] - sorted[i0]);
    if (!(q > lo && q < hi) || (!knots.empty() && !(q > knots.back())))
      return build_basis(lo, hi, n_interior);
    knots.push_back(q);
  }
  return BasisSpec(lo, hi, std::move(knots));
}

/// The four possibly-nonzero basis functions at a point: indices
/// first..first+3, with values and up to two derivatives.
struct LocalBasis {
  int first = 0;
  std::array<double, kSplineOrder> value{};
  std::array<double, kSplineOrder> d1{};
  std::array<double, kSplineOrder> d2{};
  bool clamped = false;
};

/// Evaluate on a known span. Pseudo-spans give the constant extension: the
/// boundary value with zero derivatives.
inline LocalBasis eval_local_in_span(const BasisSpec& spec, int span, double s, int order) {
  LocalBasis out;
  if (span < 0 || span >= spec.span_count()) {
    const bool below = span < 0;
    out.clamped = true;
    out.first = below ? 0 : spec.basis_count() - kSplineOrder;
    out.value[below ? 0 : kSplineOrder - 1] = 1.0;
    return out;
  }
  out.first = span;
  double ders[kSplineOrder][kSplineOrder];
  detail::basis_derivatives(spec.knot_vector(), span + kSplineDegree, s, order, ders);
  for (int j = 0; j < kSplineOrder; ++j) {
    const auto ju = static_cast<std::size_t>(j);
    out.value[ju] = ders[0][j];
    if (order >= 1) out.d1[ju] = ders[1][j];
    if (order >= 2) out.d2[ju] = ders[2][j];
  }
  return out;
}

inline LocalBasis eval_local(const BasisSpec& spec, double s, int order) {
  return eval_local_in_span(spec, spec.span_of(s), s, order);
}

/// B_k(s), B_k'(s) or B_k''(s) for all k.
inline Eigen::VectorXd eval_basis(const BasisSpec& spec, double s, int order) {
  if (order < 0 || order > 2) throw std::invalid_argument("eval_basis: order must be 0, 1 or 2");
  if (!std::isfinite(s)) throw std::invalid_argument("eval_basis: s must be finite");
  const LocalBasis lb = eval_local(spec, s, order);
  const auto& src = order == 0 ? lb.value : (order == 1 ? lb.d1 : lb.d2);
  Eigen::VectorXd out = Eigen::VectorXd::Zero(spec.basis_count());
  for (int j = 0; j < kSplineOrder; ++j) out[lb.first + j] = src[static_cast<std::size_t>(j)];
  return out;
}

/// Gauss-Legendre rule on [-1, 1].
struct GaussLegendre {
  std::array<double, kQuadraturePoints> node{};
  std::array<double, kQuadraturePoints> weight{};
};

inline const GaussLegendre& gauss_legendre16() {
  static const GaussLegendre rule = [] {
    GaussLegendre r;
    constexpr int n = kQuadraturePoints;
    const double pi = std::acos(-1.0);
    for (int i = 0; i < (n + 1) / 2; ++i) {
      double x = std::cos(pi * (i + 0.75) / (n + 0.5));
      double dp = 0.0;
      for (int it = 0; it < 100; ++it) {
        double p0 = 1.0;
        double p1 = x;
        for (int k = 2; k <= n; ++k) {
          const double p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
          p0 = p1;
          p1 = p2;
        }
        dp = n * (x * p1 - p0) / (x * x - 1.0);
        const double dx = p1 / dp;
        x -= dx;
        if (std::abs(dx) < 1e-16) break;
      }
      const double w = 2.0 / ((1.0 - x * x) * dp * dp);
      r.node[static_cast<std::size_t>(i)] = -x;
      r.node[static_cast<std::size_t>(n - 1 - i)] = x;
      r.weight[static_cast<std::size_t>(i)] = w;
      r.weight[static_cast<std::size_t>(n - 1 - i)] = w;
    }
    return r;
  }();
  return rule;
}

/// Calls fn(piece_lo, piece_hi, span) for each piece of [lo, hi] after
/// splitting at the domain ends and every interior knot. Requires lo <= hi.
template <class Fn>
void for_each_piece(const BasisSpec& spec, double lo, double hi, Fn&& fn) {
  if (!(lo < hi)) return;
  int span = spec.span_of(lo);
  double a = lo;
  while (a < hi) {
    double b;
    if (span < 0) {
      b = spec.lo();
    } else if (span >= spec.span_count()) {
      b = hi;
    } else {
      b = spec.span_hi(span);
    }
    b = std::min(b, hi);
    if (b > a) fn(a, b, span);
    a = b;
    ++span;
  }
}

/// Calls fn(node, weight, span) for the composite 16-point rule on [lo, hi].
template <class Fn>
void for_each_node(const BasisSpec& spec, double lo, double hi, Fn&& fn) {
  const GaussLegendre& gl = gauss_legendre16();
  for_each_piece(spec, lo, hi, [&](double a, double b, int span) {
    const double half = 0.5 * (b - a);
    const double mid = 0.5 * (a + b);
    for (int q = 0; q < kQuadraturePoints; ++q) {
      const auto qi = static_cast<std::size_t>(q);
      fn(mid + half * gl.node[qi], half * gl.weight[qi], span);
    }
  });
}

struct QuadratureGrid {
  std::vector<double> nodes;
  std::vector<double> weights;
  std::vector<int> span_index;

  std::size_t size() const { return nodes.size(); }
  bool empty() const { return nodes.empty(); }

  template <class F>
  double integrate(F&& f) const {
    double acc = 0.0;
    for (std::size_t i = 0; i < nodes.size(); ++i) acc += weights[i] * f(nodes[i]);
    return acc;
  }
};

inline QuadratureGrid quadrature_grid(const BasisSpec& spec, double lo, double hi) {
  if (!std::isfinite(lo) || !std::isfinite(hi))
    throw std::invalid_argument("quadrature_grid: limits must be finite");
  if (lo > hi) throw std::invalid_argument("quadrature_grid: requires lo <= hi");
  QuadratureGrid grid;
  for_each_node(spec, lo, hi, [&](double u, double w, int span) {
    grid.nodes.push_back(u);
    grid.weights.push_back(w);
    grid.span_index.push_back(span);
  });
  return grid;
}

}  // namespace ltrc
