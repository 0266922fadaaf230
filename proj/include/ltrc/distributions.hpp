#pragma once

// Error laws used by the simulation study: sampling, density, survival and
// log-hazard.

#include <array>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>
#include <string_view>

#include "ltrc/random.hpp"

namespace ltrc {

enum class ErrorLaw {
  normal,      // N(0, 1)
  gumbel,      // standard extreme value, maximum type: F(s) = exp(-exp(-s))
  mix_wide,    // 0.5 N(0, 1) + 0.5 N(0, 3^2)
  mix_shift,   // 0.5 N(0, 1) + 0.5 N(-1, 0.5^2)
  gumbel_min,  // minimum type: F(s) = 1 - exp(-exp(s)), log-hazard s
};

inline std::string_view to_string(ErrorLaw law) {
  switch (law) {
    case ErrorLaw::normal: return "normal";
    case ErrorLaw::gumbel: return "gumbel";
    case ErrorLaw::mix_wide: return "mix_wide";
    case ErrorLaw::mix_shift: return "mix_shift";
    case ErrorLaw::gumbel_min: return "gumbel_min";
  }
  return "unknown";
}

inline ErrorLaw parse_error_law(std::string_view s) {
  for (ErrorLaw law : {ErrorLaw::normal, ErrorLaw::gumbel, ErrorLaw::mix_wide, ErrorLaw::mix_shift,
                       ErrorLaw::gumbel_min})
    if (s == to_string(law)) return law;
  throw std::invalid_argument("unknown error law: " + std::string(s));
}

inline double draw_error(ErrorLaw law, Rng& rng) {
  switch (law) {
    case ErrorLaw::normal:
      return standard_normal(rng);
    case ErrorLaw::gumbel: {
      std::exponential_distribution<double> ex(1.0);
      return -std::log(ex(rng));
    }
    case ErrorLaw::gumbel_min: {
      std::exponential_distribution<double> ex(1.0);
      return std::log(ex(rng));
    }
    case ErrorLaw::mix_wide: {
      const bool wide = uniform(rng, 0.0, 1.0) < 0.5;
      const double z = standard_normal(rng);
      return wide ? 3.0 * z : z;
    }
    case ErrorLaw::mix_shift: {
      const bool shifted = uniform(rng, 0.0, 1.0) < 0.5;
      const double z = standard_normal(rng);
      return shifted ? -1.0 + 0.5 * z : z;
    }
  }
  throw std::invalid_argument("draw_error: invalid law");
}

namespace detail {

inline constexpr double kLogSqrt2Pi = 0.91893853320467274178;

struct Component {
  double weight;
  double mean;
  double sd;
};

inline int components(ErrorLaw law, std::array<Component, 2>& out) {
  switch (law) {
    case ErrorLaw::normal: out[0] = {1.0, 0.0, 1.0}; return 1;
    case ErrorLaw::mix_wide: out = {Component{0.5, 0.0, 1.0}, Component{0.5, 0.0, 3.0}}; return 2;
    case ErrorLaw::mix_shift: out = {Component{0.5, 0.0, 1.0}, Component{0.5, -1.0, 0.5}}; return 2;
    default: return 0;
  }
}

inline double log_normal_pdf(double z) { return -0.5 * z * z - kLogSqrt2Pi; }

// log(1 - Phi(z)), using the asymptotic Mills-ratio series where erfc underflows.
inline double log_normal_sf(double z) {
  if (z < 25.0) return std::log(0.5 * std::erfc(z / std::sqrt(2.0)));
  const double z2 = z * z;
  const double series = 1.0 - 1.0 / z2 + 3.0 / (z2 * z2) - 15.0 / (z2 * z2 * z2);
  return log_normal_pdf(z) - std::log(z) + std::log(series);
}

inline double log_sum_exp(double a, double b) {
  if (a == -std::numeric_limits<double>::infinity()) return b;
  if (b == -std::numeric_limits<double>::infinity()) return a;
  const double m = std::max(a, b);
  return m + std::log(std::exp(a - m) + std::exp(b - m));
}

}  // namespace detail

inline double error_log_density(ErrorLaw law, double s) {
  switch (law) {
    case ErrorLaw::gumbel: return -s - std::exp(-s);
    case ErrorLaw::gumbel_min: return s - std::exp(s);
    default: break;
  }
  std::array<detail::Component, 2> comp{};
  const int m = detail::components(law, comp);
  double acc = -std::numeric_limits<double>::infinity();
  for (int c = 0; c < m; ++c) {
    const auto& k = comp[static_cast<std::size_t>(c)];
    acc = detail::log_sum_exp(acc, std::log(k.weight) - std::log(k.sd) +
                                       detail::log_normal_pdf((s - k.mean) / k.sd));
  }
  return acc;
}

inline double error_log_survival(ErrorLaw law, double s) {
  switch (law) {
    case ErrorLaw::gumbel: {
      // log(1 - exp(-e^{-s}))
      const double u = std::exp(-s);
      return std::log(-std::expm1(-u));
    }
    case ErrorLaw::gumbel_min: return -std::exp(s);
    default: break;
  }
  std::array<detail::Component, 2> comp{};
  const int m = detail::components(law, comp);
  double acc = -std::numeric_limits<double>::infinity();
  for (int c = 0; c < m; ++c) {
    const auto& k = comp[static_cast<std::size_t>(c)];
    acc = detail::log_sum_exp(acc, std::log(k.weight) + detail::log_normal_sf((s - k.mean) / k.sd));
  }
  return acc;
}

inline double error_cdf(ErrorLaw law, double s) { return -std::expm1(error_log_survival(law, s)); }

/// log lambda(s) = log f(s) - log(1 - F(s)).
inline double true_log_hazard(ErrorLaw law, double s) {
  if (!std::isfinite(s)) throw std::invalid_argument("true_log_hazard: s must be finite");
  switch (law) {
    case ErrorLaw::gumbel_min: return s;
    case ErrorLaw::gumbel: {
      // lambda = u / (e^u - 1), u = e^{-s}
      const double u = std::exp(-s);
      if (u > 700.0) return -s - u;  // log(expm1(u)) ~ u
      return -s - std::log(std::expm1(u));
    }
    default: return error_log_density(law, s) - error_log_survival(law, s);
  }
}

/// Quantile by bisection on the CDF.
inline double error_quantile(ErrorLaw law, double p) {
  if (!(p > 0.0 && p < 1.0)) throw std::invalid_argument("error_quantile: p must lie in (0, 1)");
  double lo = -60.0;
  double hi = 60.0;
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    (error_cdf(law, mid) < p ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

}  // namespace ltrc
