#pragma once

// Data and parameter types shared by the likelihood, estimator and inference.

#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace ltrc {

/// One subject: response y (already on the modelling scale), event indicator,
/// optional left-truncation time on the same scale, covariates.
struct Observation {
  double y = 0.0;
  int delta = 1;
  std::optional<double> t;
  std::vector<double> x;
};

using Dataset = std::vector<Observation>;

/// Bundled parameters: regression coefficients and spline coefficients of the
/// error log-hazard.
struct Theta {
  Eigen::VectorXd beta;
  Eigen::VectorXd gamma;

  Eigen::Index dim() const { return beta.size() + gamma.size(); }

  Eigen::VectorXd packed() const {
    Eigen::VectorXd v(dim());
    v << beta, gamma;
    return v;
  }

  static Theta unpack(const Eigen::VectorXd& v, Eigen::Index d) {
    return Theta{v.head(d), v.tail(v.size() - d)};
  }
};

inline std::size_t covariate_dim(const Dataset& data) {
  return data.empty() ? 0 : data.front().x.size();
}

inline double linear_predictor(const Observation& obs, const Eigen::VectorXd& beta) {
  double acc = 0.0;
  for (std::size_t j = 0; j < obs.x.size(); ++j) acc += obs.x[j] * beta[static_cast<Eigen::Index>(j)];
  return acc;
}

/// Residual pair on the error scale; tau is absent for untruncated subjects.
struct Residual {
  double eps = 0.0;
  std::optional<double> tau;
};

inline Residual residuals(const Theta& theta, const Observation& obs) {
  if (static_cast<Eigen::Index>(obs.x.size()) != theta.beta.size())
    throw std::invalid_argument("residuals: covariate dimension does not match beta");
  const double xb = linear_predictor(obs, theta.beta);
  Residual r{obs.y - xb, std::nullopt};
  if (obs.t) r.tau = *obs.t - xb;
  return r;
}

/// Throws std::invalid_argument naming the first offending row (0-based).
inline void validate_dataset(const Dataset& data) {
  if (data.empty()) throw std::invalid_argument("dataset is empty");
  const std::size_t d = data.front().x.size();
  if (d == 0) throw std::invalid_argument("dataset has no covariates");
  for (std::size_t i = 0; i < data.size(); ++i) {
    const Observation& o = data[i];
    const std::string row = "row " + std::to_string(i);
    if (o.x.size() != d) throw std::invalid_argument(row + ": covariate count mismatch");
    if (!std::isfinite(o.y)) throw std::invalid_argument(row + ": response is not finite");
    if (o.delta != 0 && o.delta != 1) throw std::invalid_argument(row + ": event must be 0 or 1");
    for (double v : o.x)
      if (!std::isfinite(v)) throw std::invalid_argument(row + ": covariate is not finite");
    if (o.t) {
      if (!std::isfinite(*o.t)) throw std::invalid_argument(row + ": truncation is not finite");
      if (!(o.y > *o.t))
        throw std::invalid_argument(row + ": response must exceed truncation time");
    }
  }
}

}  // namespace ltrc
