#pragma once

// Random (theta, data, basis) fixtures shared by the unit tests.

#include <algorithm>
#include <cstdint>
#include <random>

#include "ltrc/likelihood.hpp"
#include "ltrc/model.hpp"
#include "ltrc/spline_basis.hpp"

namespace fixture {

struct Problem {
  ltrc::Theta theta;
  ltrc::Dataset data;
  ltrc::BasisSpec spec;
};

// Residuals at theta stay strictly inside the spline domain so the objective
// is smooth in a neighbourhood of theta.
inline Problem random_problem(std::uint64_t seed, bool allow_untruncated = true) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd(0.0, 1.0);
  std::uniform_real_distribution<double> ud(0.0, 1.0);
  const int d = 1 + static_cast<int>(rng() % 3);
  const int n = 5 + static_cast<int>(rng() % 36);
  const int knots = static_cast<int>(rng() % 5);

  Problem p;
  p.theta.beta.resize(d);
  for (int j = 0; j < d; ++j) p.theta.beta[j] = nd(rng);
  double lo = 1e300;
  double hi = -1e300;
  for (int i = 0; i < n; ++i) {
    ltrc::Observation o;
    o.x.resize(static_cast<std::size_t>(d));
    for (auto& v : o.x) v = nd(rng);
    const double xb = ltrc::linear_predictor(o, p.theta.beta);
    const double e = nd(rng);
    o.y = xb + e;
    o.delta = ud(rng) < 0.7 ? 1 : 0;
    if (!allow_untruncated || ud(rng) < 0.7) o.t = o.y - 0.1 - 2.5 * ud(rng);
    lo = std::min(lo, o.t ? *o.t - xb : e);
    hi = std::max(hi, e);
    p.data.push_back(o);
  }
  p.spec = ltrc::build_basis(lo - 0.5, hi + 0.5, knots);
  p.theta.gamma.resize(p.spec.basis_count());
  for (int k = 0; k < p.spec.basis_count(); ++k) p.theta.gamma[k] = 0.5 * nd(rng);
  return p;
}

}  // namespace fixture
