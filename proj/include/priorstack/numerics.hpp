#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

namespace priorstack {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Deterministic random stream keyed by (seed, label).
///
/// Streams with different labels are seeded from a 64-bit mix of the master
/// seed and a hash of the label, so per-fold or per-replicate streams never
/// share state and do not depend on the order in which they are created.
/// Only fully specified engine output is consumed (no std distributions), so
/// the byte stream is identical across standard libraries.
class RngStream {
 public:
  RngStream(std::uint64_t seed, std::string label);

  /// Independent stream labelled "<label>/<sublabel>".
  [[nodiscard]] RngStream child(std::string_view sublabel) const;

  [[nodiscard]] std::uint64_t seed() const { return seed_; }
  [[nodiscard]] const std::string& label() const { return label_; }

  std::uint64_t next_u64() { return engine_(); }
  /// Uniform on the open interval (0, 1).
  double uniform();
  /// Standard Gaussian (Box-Muller).
  double normal();
  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);
  bool bernoulli(double prob) { return uniform() < prob; }

  template <class T>
  void shuffle(std::vector<T>& values) {
    for (std::size_t i = values.size(); i > 1; --i) {
      const auto j = static_cast<std::size_t>(below(i));
      std::swap(values[i - 1], values[j]);
    }
  }

 private:
  std::uint64_t seed_;
  std::string label_;
  std::mt19937_64 engine_;
  double spare_normal_ = 0.0;
  bool has_spare_ = false;
};

/// AR(1) correlation structure: Sigma_ij = rho^|i-j|.
struct CorrelationSpec {
  std::size_t p = 1;
  double rho = 0.0;
};

/// Upper-triangular R with R^T R = Sigma for the AR(1) matrix, built by the
/// closed-form recursion (Sigma itself is never formed).
Matrix cholesky_upper(const CorrelationSpec& spec);

/// Upper-triangular Cholesky factor of a general symmetric positive definite matrix.
Matrix cholesky_upper(const Matrix& sigma);

/// n x p matrix E * R with E iid standard Gaussian, filled row by row.
Matrix mvnormal_sample(RngStream& rng, std::size_t n, const Matrix& upper);

/// Same distribution as mvnormal_sample with cholesky_upper(spec), computed by
/// the AR(1) recursion in O(n p). Consumes the stream identically, so both
/// routes agree to rounding for equal streams.
Matrix ar1_sample(RngStream& rng, std::size_t n, const CorrelationSpec& spec);

struct Standardized {
  Matrix x;
  Vector means;
  Vector sds;  ///< population sd; 0 for constant columns
  std::vector<bool> constant;
};

/// Centre each column and scale to unit population sd. Constant columns are
/// centred, flagged and left unscaled.
Standardized standardize_columns(const Matrix& x);

/// Cap on worker threads used by parallel_for (0 = hardware concurrency).
void set_max_threads(unsigned threads);
unsigned max_threads();

/// Runs body(i) for i in [0, count). Nested calls execute serially on the
/// calling thread. The first exception (by index) is rethrown after all
/// workers finish. Callers write only to index-disjoint outputs, so results
/// never depend on the thread count.
void parallel_for(std::size_t count, const std::function<void(std::size_t)>& body);

}  // namespace priorstack
