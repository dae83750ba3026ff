#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "priorstack/calibration.hpp"
#include "priorstack/solver.hpp"

namespace priorstack {

enum class StackMode { standard, simultaneous };

std::string_view to_string(StackMode mode);
StackMode parse_stack_mode(std::string_view name);

/// Prior effects, one column per source.
struct PriorEffects {
  Matrix z;  ///< p x m
  std::vector<std::string> names;

  [[nodiscard]] Eigen::Index sources() const { return z.cols(); }
};

struct MetaDesign {
  Matrix h0cv;  ///< n x m' held-out calibrated predictors (no intercept), retained sources only
  Vector h1cv_min;
  Vector h1cv_1se;
  std::vector<std::string> labels;
  std::vector<Eigen::Index> retained;         ///< source indices behind the h0cv columns
  std::vector<CalibratedSource> sources;      ///< full-data calibrations of all m sources
  CvFit base;                                 ///< no-co-data learner on the same folds
  CalibrationMethod method = CalibrationMethod::isotonic;

  /// Meta features [h0cv | h1cv_min | h1cv_1se] used by standard stacking.
  [[nodiscard]] Matrix standard_features() const;
};

/// Rescales and calibrates each source on the full data and on every training
/// split. The significance filter reads the held-out predictions (or the
/// full-data fit, per options.filter_residuals); retained sources fill the
/// meta design. The no-co-data learner is cross-validated on the same folds.
MetaDesign build_meta_design(const Dataset& data, const PriorEffects& priors, const FoldPlan& folds,
                             CalibrationMethod method, const PenaltySpec& base_spec, const RngStream& rng,
                             const CalibrationOptions& options = {});

/// Fit-time summaries for reporting; not serialised with the model.
struct FitDiagnostics {
  double base_lambda_min = 0.0;
  double base_lambda_1se = 0.0;
  double base_cv_loss = 0.0;  ///< no-co-data learner at lambda_min
  double meta_cv_loss = 0.0;  ///< meta-learner at its chosen lambda
};

struct StackedModel {
  StackMode mode = StackMode::standard;
  Family family = Family::gaussian;
  CalibrationMethod method = CalibrationMethod::isotonic;
  std::vector<std::string> source_names;
  std::vector<CalibratedSource> sources;
  std::vector<std::string> feature_names;
  /// Meta intercept (standard) or joint-fit intercept (simultaneous).
  double omega0 = 0.0;
  /// One weight per source (0 when filtered out); standard mode appends the
  /// lambda_min and lambda_1se weights.
  Vector omega;
  Vector beta_direct;
  Vector beta_star;
  double intercept_star = 0.0;
  double meta_lambda = 0.0;
  std::uint64_t fold_seed = 0;
  FitDiagnostics diagnostics;

  [[nodiscard]] Eigen::Index p() const { return beta_star.size(); }
};

/// Non-negative lasso over the meta features, lambda_min by internal CV.
StackedModel fit_standard_stack(const MetaDesign& meta, const Dataset& data, const RngStream& rng,
                                int meta_folds = 10);

inline constexpr Eigen::Index kMaxSimultaneousSources = 10;

/// Joint fit on [h0cv | X]: unpenalised non-negative source weights and
/// penalised feature deviations (elastic-net alpha from base_alpha).
StackedModel fit_simultaneous_stack(const MetaDesign& meta, const Dataset& data, double base_alpha,
                                    const RngStream& rng, int meta_folds = 10);

Vector predict_linear(const StackedModel& model, const Matrix& xnew);
/// Means (gaussian) or probabilities (binomial).
Vector predict(const StackedModel& model, const Matrix& xnew);

struct StackOptions {
  StackMode mode = StackMode::standard;
  CalibrationMethod method = CalibrationMethod::isotonic;
  CalibrationOptions calibration;
  /// Elastic-net alpha of the no-co-data learner and of the simultaneous deviations.
  double alpha = 1.0;
  int folds = 10;
  std::uint64_t seed = 1;
};

/// Whole pipeline: folds, meta design and the meta-learner.
StackedModel fit_stacked(const Dataset& data, const PriorEffects& priors, const StackOptions& options);

/// Fold count usable for data of this size (binomial: limited by the minority class).
int feasible_folds(const Vector& y, Family family, int requested);

}  // namespace priorstack
