#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "priorstack/glm.hpp"
#include "priorstack/numerics.hpp"

namespace priorstack {

/// Elastic-net penalty with per-coefficient factors and box constraints.
///
/// The objective at a given lambda is
///   (1/n) sum_i loss_i + lambda * sum_j pf_j * (alpha |b_j| + (1 - alpha)/2 b_j^2)
/// where b_j are coefficients of the internally standardised features and
/// loss_i is (y - eta)^2 / 2 (gaussian) or the negative Bernoulli
/// log-likelihood (binomial). Bounds apply on the original feature scale.
/// Empty vectors mean the defaults (factor 1, no bounds).
struct PenaltySpec {
  double alpha = 1.0;
  Vector penalty_factors;
  Vector lower;
  Vector upper;
  int nlambda = 100;
  /// Defaults to 0.01 when n < p and 1e-4 otherwise.
  std::optional<double> lambda_min_ratio;
  double tolerance = 1e-7;
  long max_sweeps = 100000;
  /// Gaussian ridge without bounds and with equal factors is solved exactly
  /// through one SVD instead of coordinate descent.
  bool closed_form_ridge = true;

  /// Copy with every vector sized to p and validated.
  [[nodiscard]] PenaltySpec resolved(Eigen::Index p) const;
};

/// Regularisation path on the original feature scale.
struct PathFit {
  Family family = Family::gaussian;
  PenaltySpec spec;
  Vector lambdas;     ///< decreasing
  Vector intercepts;  ///< one per lambda
  Matrix coefs;       ///< p x L
  Vector means;       ///< column means used for standardisation
  Vector sds;         ///< population sds (0 = constant column)
  long sweeps = 0;    ///< coordinate sweeps used over the whole path

  [[nodiscard]] Eigen::Index size() const { return lambdas.size(); }
};

/// Assignment of samples to K cross-validation folds (0-based fold ids).
struct FoldPlan {
  int k = 10;
  std::vector<int> assignments;
  std::uint64_t seed = 0;
  std::string label;

  [[nodiscard]] std::vector<Eigen::Index> train_rows(int fold) const;
  [[nodiscard]] std::vector<Eigen::Index> test_rows(int fold) const;
  /// Throws InvalidParameter unless K >= 2, sizes match and folds are non-empty.
  void validate(Eigen::Index n) const;
};

/// Random folds; binomial responses are stratified so each fold holds both
/// classes. Throws DegenerateFolds when a class has fewer than K samples.
FoldPlan make_folds(const Vector& y, Family family, int k, const RngStream& rng);

struct CvFit {
  PathFit path;  ///< full-data fit
  FoldPlan folds;
  Matrix cv_eta;  ///< n x L leave-fold-out linear predictors
  Vector cv_loss_mean;
  Vector cv_loss_se;
  Eigen::Index idx_min = 0;
  Eigen::Index idx_1se = 0;
};

double soft_threshold(double z, double gamma);

/// Solves the penalised problem along a decreasing lambda sequence with warm
/// starts. When `lambdas` is empty the sequence runs from lambda_max (the
/// smallest value with every penalised coefficient at zero) down to
/// lambda_max * lambda_min_ratio on a log scale.
PathFit fit_path(const Dataset& data, const PenaltySpec& spec, std::span<const double> lambdas = {});

/// K-fold cross-validation on the full-data lambda sequence, mean deviance loss.
CvFit cv_fit(const Dataset& data, const PenaltySpec& spec, const FoldPlan& folds);

/// Index of the minimum (largest lambda on ties) and the largest lambda whose
/// loss is within one standard error of that minimum.
std::pair<Eigen::Index, Eigen::Index> select_lambda(const Vector& loss_mean, const Vector& loss_se);

Vector predict_linear(const PathFit& fit, Eigen::Index lambda_index, const Matrix& xnew);

/// Largest violation of the optimality conditions at path index l, measured
/// on the standardised scale (intercept condition included).
double kkt_residual(const Dataset& data, const PathFit& fit, Eigen::Index l);

/// Objective value at path index l (standardised-scale penalty).
double penalized_objective(const Dataset& data, const PathFit& fit, Eigen::Index l);

}  // namespace priorstack
