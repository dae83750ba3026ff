#include "priorstack/glm.hpp"

#include <algorithm>
#include <cmath>

#include "priorstack/errors.hpp"

namespace priorstack {

std::string_view to_string(Family family) {
  return family == Family::gaussian ? "gaussian" : "binomial";
}

Family parse_family(std::string_view name) {
  if (name == "gaussian") return Family::gaussian;
  if (name == "binomial") return Family::binomial;
  throw InvalidParameter("unknown family '" + std::string(name) + "'");
}

void Dataset::validate() const {
  if (x.rows() < 1 || x.cols() < 1) throw DataError("dataset needs n >= 1 and p >= 1");
  if (y.size() != x.rows()) {
    throw DataError("response length " + std::to_string(y.size()) + " does not match " +
                    std::to_string(x.rows()) + " feature rows");
  }
  for (Eigen::Index j = 0; j < x.cols(); ++j) {
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      if (!std::isfinite(x(i, j))) {
        throw DataError("non-finite feature value at row " + std::to_string(i + 1) +
                        ", column " + std::to_string(j + 1));
      }
    }
  }
  for (Eigen::Index i = 0; i < y.size(); ++i) {
    if (!std::isfinite(y[i])) {
      throw DataError("non-finite response at row " + std::to_string(i + 1));
    }
    if (family == Family::binomial && y[i] != 0.0 && y[i] != 1.0) {
      throw DataError("binomial response must be 0 or 1 (row " + std::to_string(i + 1) + ")");
    }
  }
}

Dataset Dataset::subset(const std::vector<Eigen::Index>& rows) const {
  Dataset out;
  out.family = family;
  out.x.resize(static_cast<Eigen::Index>(rows.size()), x.cols());
  out.y.resize(static_cast<Eigen::Index>(rows.size()));
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const auto i = static_cast<Eigen::Index>(r);
    out.x.row(i) = x.row(rows[r]);
    out.y[i] = y[rows[r]];
  }
  return out;
}

double link_inverse(Family family, double eta) {
  if (family == Family::gaussian) return eta;
  // Branches keep exp() from overflowing for large |eta|.
  if (eta >= 0.0) return 1.0 / (1.0 + std::exp(-eta));
  const double e = std::exp(eta);
  return e / (1.0 + e);
}

Vector link_inverse(Family family, const Vector& eta) {
  if (family == Family::gaussian) return eta;
  return eta.unaryExpr([](double v) { return link_inverse(Family::binomial, v); });
}

namespace {

void check_lengths(const Vector& y, const Vector& mu) {
  if (y.size() != mu.size()) {
    throw InvalidParameter("length mismatch: " + std::to_string(y.size()) + " responses vs " +
                           std::to_string(mu.size()) + " fitted values");
  }
  if (y.size() == 0) throw InvalidParameter("deviance of an empty vector is undefined");
}

double clamp_prob(double mu) { return std::clamp(mu, kProbClamp, 1.0 - kProbClamp); }

double unit_deviance(Family family, double y, double mu) {
  if (family == Family::gaussian) return (y - mu) * (y - mu);
  const double m = clamp_prob(mu);
  double d = 0.0;
  if (y > 0.0) d -= y * std::log(m);
  if (y < 1.0) d -= (1.0 - y) * std::log1p(-m);
  return 2.0 * d;
}

}  // namespace

double mean_deviance(Family family, const Vector& y, const Vector& mu) {
  check_lengths(y, mu);
  double total = 0.0;
  for (Eigen::Index i = 0; i < y.size(); ++i) total += unit_deviance(family, y[i], mu[i]);
  return total / static_cast<double>(y.size());
}

Vector deviance_residuals(Family family, const Vector& y, const Vector& mu) {
  check_lengths(y, mu);
  Vector out(y.size());
  for (Eigen::Index i = 0; i < y.size(); ++i) {
    out[i] = family == Family::gaussian ? std::abs(y[i] - mu[i])
                                        : std::sqrt(unit_deviance(family, y[i], mu[i]));
  }
  return out;
}

double intercept_only_mu(Family /*family*/, const Vector& y) {
  if (y.size() == 0) throw InvalidParameter("intercept_only_mu: empty response");
  return y.mean();
}

}  // namespace priorstack
