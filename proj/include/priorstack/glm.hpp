#pragma once

#include <string>
#include <string_view>

#include "priorstack/numerics.hpp"

namespace priorstack {

/// Response family. Gaussian uses the identity link, binomial the logit link.
enum class Family { gaussian, binomial };

std::string_view to_string(Family family);
Family parse_family(std::string_view name);

/// Probabilities are clamped to [kProbClamp, 1 - kProbClamp] before logs.
inline constexpr double kProbClamp = 1e-12;

/// Target data: features X (n x p), response y and its family.
struct Dataset {
  Matrix x;
  Vector y;
  Family family = Family::gaussian;

  [[nodiscard]] Eigen::Index n() const { return x.rows(); }
  [[nodiscard]] Eigen::Index p() const { return x.cols(); }

  /// Throws DataError on shape mismatch, non-finite entries or a binomial
  /// response outside {0, 1}.
  void validate() const;

  /// Rows selected by index, in the given order.
  [[nodiscard]] Dataset subset(const std::vector<Eigen::Index>& rows) const;
};

double link_inverse(Family family, double eta);
Vector link_inverse(Family family, const Vector& eta);

/// Mean deviance: squared error (gaussian) or -2 log-likelihood (binomial).
double mean_deviance(Family family, const Vector& y, const Vector& mu);

/// Per-sample absolute deviance residuals.
Vector deviance_residuals(Family family, const Vector& y, const Vector& mu);

/// Fitted mean of the intercept-only model (the sample mean for both families).
double intercept_only_mu(Family family, const Vector& y);

}  // namespace priorstack
