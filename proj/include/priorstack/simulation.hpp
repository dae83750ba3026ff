#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "priorstack/stacking.hpp"

namespace priorstack {

/// Tian-style generator: one target, K sources of which the first Ka are transferable.
struct ExternalSimConfig {
  Family family = Family::gaussian;
  double h = 5.0;
  int s = 50;
  int K = 5;
  int Ka = 5;
  int n_target = 100;
  int n_source = 150;
  int p = 1000;
  int n_test = 10000;
  /// Elastic-net alpha of the per-source fits that produce the prior effects.
  double source_alpha = 0.0;

  void validate() const;
};

/// Three sources with correlated coefficient vectors; source 1 is unrelated.
struct InternalSimConfig {
  Family family = Family::gaussian;
  double rho_x = 0.5;
  double rho_beta = 0.5;
  double pi = 0.2;
  double w = 0.5;
  int n_target = 100;
  int n_source = 150;
  int p = 1000;
  int n_test = 10000;
  double source_alpha = 0.0;

  void validate() const;
};

struct SimOutput {
  Dataset target_train;
  Dataset target_test;
  std::vector<Dataset> sources;
  PriorEffects priors;
  Vector true_beta;  ///< target coefficients
  Matrix source_beta;  ///< p x K source coefficients
  /// Pearson correlation between the target and each source coefficient vector.
  Vector source_coef_correlations;
};

/// Prior effects: lambda_min coefficients of a cross-validated penalised fit per source.
PriorEffects derive_priors(const std::vector<Dataset>& sources, double alpha, const RngStream& rng, int folds = 10);

SimOutput simulate_external(const ExternalSimConfig& cfg, const RngStream& rng);
SimOutput simulate_internal(const InternalSimConfig& cfg, const RngStream& rng);

/// Test deviance as a percentage of the deviance of predicting the training mean.
double relative_test_loss(Family family, const Vector& y_test, const Vector& predictions, double train_mean);

/// P(score_pos > score_neg) + P(tie)/2 over all positive/negative pairs.
double concordance_index(const Vector& y, const Vector& score);

enum class SimProtocol { external, internal };

std::string_view to_string(SimProtocol protocol);
SimProtocol parse_protocol(std::string_view name);

/// Methods compared per replicate, in output order.
inline const std::vector<std::string> kSimMethods = {"baseline", "exp.sta", "exp.sim", "iso.sta", "iso.sim"};

struct ScenarioConfig {
  SimProtocol protocol = SimProtocol::external;
  ExternalSimConfig external;
  InternalSimConfig internal;
  /// Elastic-net alpha of the target learners (baseline and stacking).
  double alpha = 0.0;
  int folds = 10;
  int reps = 10;
  std::uint64_t seed = 1;
  std::vector<std::string> methods = kSimMethods;
  CalibrationOptions calibration;

  [[nodiscard]] Family family() const {
    return protocol == SimProtocol::external ? external.family : internal.family;
  }
  void validate() const;
};

struct ReplicateResult {
  std::string method;
  int replicate = 0;
  double relative_loss = 0.0;
  std::optional<double> cindex;  ///< binomial only
};

/// One replicate: simulate, fit every requested method, score on the test rows.
std::vector<ReplicateResult> run_replicate(const ScenarioConfig& cfg, int replicate);

/// All replicates (in parallel), ordered by replicate then method.
std::vector<ReplicateResult> run_scenario(const ScenarioConfig& cfg);

std::string results_csv_header();
std::string results_csv(const ScenarioConfig& cfg, const std::vector<ReplicateResult>& results);

/// Shortest decimal text that reads back to the same double.
std::string format_double(double value);

}  // namespace priorstack
