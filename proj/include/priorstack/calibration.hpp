#pragma once

#include <optional>
#include <string_view>
#include <vector>

#include "priorstack/glm.hpp"
#include "priorstack/numerics.hpp"

namespace priorstack {

enum class CalibrationMethod { exponential, isotonic };

std::string_view to_string(CalibrationMethod method);
CalibrationMethod parse_calibration_method(std::string_view name);

/// Exponent grid for exponential calibration.
std::vector<double> default_tau_grid();

/// Residuals the significance filter compares: the full-data calibration
/// scored on its own training rows, or per-fold calibrations scored on the
/// rows they did not see (the stacking pipeline's default).
enum class FilterResiduals { in_sample, cross_validated };

struct CalibrationOptions {
  std::vector<double> tau_grid = default_tau_grid();
  /// Also fit the sign-inverted prior and keep whichever fits better.
  bool try_inverted = false;
  double isotonic_alpha = 0.95;
  int isotonic_folds = 10;
  double significance = 0.05;
  FilterResiduals filter_residuals = FilterResiduals::cross_validated;
};

struct CalibratedSource {
  CalibrationMethod method = CalibrationMethod::exponential;
  Vector gamma;           ///< original feature order
  double alpha_k = 0.0;   ///< intercept of the calibration model
  std::optional<double> theta;
  std::optional<double> tau;
  Vector delta;           ///< isotonic only: sign-constrained coefficients (sorted order, non-zero z)
  std::optional<double> lambda;  ///< isotonic only: penalty chosen by internal CV
  bool inverted = false;
  bool all_zero = false;
  double deviance = 0.0;  ///< in-sample mean deviance of the calibration model
  double pvalue = 1.0;
  bool retained = false;
};

struct RescaledPrior {
  Vector z;
  bool all_zero = false;
};

/// Divides by max |z| (all-zero input is returned unchanged and flagged).
RescaledPrior rescale_prior(const Vector& z);

/// gamma_j = theta * sign(z_j) * |z_j|^tau, zero wherever z_j is zero.
Vector exponential_gamma(const Vector& z, double theta, double tau);

/// Linear predictor of a calibrated source, optionally without alpha_k.
Vector calibrated_eta(const CalibratedSource& source, const Matrix& x, bool with_intercept = true);

CalibratedSource calibrate_exponential(const Dataset& data, const Vector& z,
                                       const CalibrationOptions& options = {});

struct CumsumDesign {
  std::vector<Eigen::Index> ordering;  ///< ordering[j] = original column of sorted position j
  Eigen::Index q = 0;                  ///< number of negative prior effects
  Matrix w;
};

/// Prefix sums over the negative block and suffix sums over the rest, with
/// columns sorted by increasing z (stable).
CumsumDesign build_cumsum_design(const Matrix& x, const Vector& z);

/// Partial sums of delta in sorted order: suffix sums within the first q,
/// prefix sums after.
Vector delta_to_sorted_gamma(const Vector& delta, Eigen::Index q);

CalibratedSource calibrate_isotonic(const Dataset& data, const Vector& z, const RngStream& rng,
                                    const CalibrationOptions& options = {});

CalibratedSource calibrate(CalibrationMethod method, const Dataset& data, const Vector& z,
                           const RngStream& rng, const CalibrationOptions& options = {});

enum class WilcoxonMethod { automatic, exact, normal };

/// One-sided signed-rank test of the alternative "differences tend to be
/// negative". Zeros are dropped and tied magnitudes get mid-ranks. The
/// automatic method enumerates the null exactly for at most 25 untied
/// differences and uses the tie- and continuity-corrected normal
/// approximation otherwise.
double wilcoxon_signed_rank_one_sided(const Vector& d, WilcoxonMethod method = WilcoxonMethod::automatic);

/// Sets pvalue and retained by comparing absolute deviance residuals of the
/// calibrated model with those of the intercept-only model.
CalibratedSource filter_source(const Dataset& data, CalibratedSource source, double significance = 0.05);

/// Same test on supplied linear predictors (with intercept) and
/// intercept-only means, e.g. held-out predictions from cross-validation.
CalibratedSource filter_source_heldout(const Vector& y, Family family, CalibratedSource source, const Vector& eta,
                                       const Vector& mu_null, double significance = 0.05);

}  // namespace priorstack
