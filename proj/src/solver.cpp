#include "priorstack/solver.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "priorstack/errors.hpp"

namespace priorstack {
namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kMinWeight = 1e-5;
constexpr double kRidgeAlphaFloor = 1e-3;
constexpr int kMaxIrls = 100;
constexpr Eigen::Index kMaxPolishSize = 256;
constexpr int kMaxPolishAttempts = 400;

bool all_equal_positive(const Vector& v, const std::vector<char>& mask) {
  double first = -1.0;
  for (Eigen::Index j = 0; j < v.size(); ++j) {
    if (!mask[static_cast<std::size_t>(j)]) continue;
    if (v[j] <= 0.0) return false;
    if (first < 0.0) first = v[j];
    if (v[j] != first) return false;
  }
  return true;
}

/// Coordinate descent on the standardised design. Coefficients are kept on
/// the standardised scale; the caller back-transforms.
class CoordinateSolver {
 public:
  CoordinateSolver(const Matrix& xs, const Vector& y, Family family, const PenaltySpec& spec,
                   const Vector& lo, const Vector& hi, std::vector<char> eligible)
      : xs_(xs),
        y_(y),
        family_(family),
        spec_(spec),
        lo_(lo),
        hi_(hi),
        eligible_(std::move(eligible)),
        n_(static_cast<double>(xs.rows())),
        beta_(Vector::Zero(xs.cols())),
        hess_(Vector::Zero(xs.cols())) {
    const double ybar = y.mean();
    beta0_ = family == Family::gaussian ? ybar : std::log(ybar / (1.0 - ybar));
  }

  [[nodiscard]] const Vector& beta() const { return beta_; }
  [[nodiscard]] double beta0() const { return beta0_; }
  [[nodiscard]] long sweeps() const { return sweeps_; }

  void set_eligible(std::vector<char> eligible) { eligible_ = std::move(eligible); }

  void solve(double lambda) {
    if (family_ == Family::gaussian) {
      const Vector ones = Vector::Ones(xs_.rows());
      solve_quadratic(lambda, ones, y_);
      return;
    }
    solve_logistic(lambda);
  }

  /// Gradient of the mean log-likelihood, (1/n) X^T (y - mu).
  [[nodiscard]] Vector score() const {
    const Vector mu = link_inverse(family_, linear_predictor());
    return xs_.transpose() * (y_ - mu) / n_;
  }

 private:
  [[nodiscard]] Vector linear_predictor() const {
    Vector eta = Vector::Constant(xs_.rows(), beta0_);
    for (Eigen::Index j = 0; j < beta_.size(); ++j) {
      if (beta_[j] != 0.0) eta.noalias() += beta_[j] * xs_.col(j);
    }
    return eta;
  }

  [[nodiscard]] double penalty(double lambda) const {
    double total = 0.0;
    for (Eigen::Index j = 0; j < beta_.size(); ++j) {
      const double b = beta_[j];
      total += spec_.penalty_factors[j] *
               (spec_.alpha * std::abs(b) + 0.5 * (1.0 - spec_.alpha) * b * b);
    }
    return lambda * total;
  }

  [[nodiscard]] double logistic_objective(double lambda) const {
    const Vector eta = linear_predictor();
    double loss = 0.0;
    for (Eigen::Index i = 0; i < eta.size(); ++i) {
      const double e = eta[i];
      // log(1 + exp(e)) without overflow
      const double softplus = e > 0.0 ? e + std::log1p(std::exp(-e)) : std::log1p(std::exp(e));
      loss += softplus - y_[i] * e;
    }
    return loss / n_ + penalty(lambda);
  }

  void solve_logistic(double lambda) {
    double objective = logistic_objective(lambda);
    for (int iter = 0; iter < kMaxIrls; ++iter) {
      const Vector eta = linear_predictor();
      Vector v(eta.size());
      Vector z(eta.size());
      for (Eigen::Index i = 0; i < eta.size(); ++i) {
        const double mu = link_inverse(Family::binomial, eta[i]);
        v[i] = std::max(mu * (1.0 - mu), kMinWeight);
        z[i] = eta[i] + (y_[i] - mu) / v[i];
      }
      const Vector old_beta = beta_;
      const double old_beta0 = beta0_;
      solve_quadratic(lambda, v, z);

      double next = logistic_objective(lambda);
      // Step halving guards against the rare IRLS overshoot.
      for (int halving = 0; halving < 30 && next > objective + 1e-12 * std::abs(objective);
           ++halving) {
        beta_ = 0.5 * (beta_ + old_beta);
        beta0_ = 0.5 * (beta0_ + old_beta0);
        next = logistic_objective(lambda);
      }
      double change = std::abs(beta0_ - old_beta0) * std::sqrt(v.sum() / n_);
      for (Eigen::Index j = 0; j < beta_.size(); ++j) {
        change = std::max(change, std::abs(beta_[j] - old_beta[j]) * std::sqrt(hess_[j]));
      }
      objective = next;
      if (change < spec_.tolerance) break;
    }
  }

  // Weighted least-squares subproblem:
  //   (1/2n) sum v_i (z_i - b0 - x_i b)^2 + penalty, subject to the box.
  void solve_quadratic(double lambda, const Vector& v, const Vector& z) {
    const Eigen::Index p = xs_.cols();
    const bool unit_weights = family_ == Family::gaussian;
    sumv_ = v.sum();
    for (Eigen::Index j = 0; j < p; ++j) {
      if (!eligible_[static_cast<std::size_t>(j)]) continue;
      hess_[j] = unit_weights ? xs_.col(j).squaredNorm() / n_
                              : xs_.col(j).cwiseAbs2().dot(v) / n_;
    }
    pen1_ = lambda * spec_.alpha * spec_.penalty_factors;
    pen2_ = lambda * (1.0 - spec_.alpha) * spec_.penalty_factors;
    residual_ = v.cwiseProduct(z - linear_predictor());

    std::vector<Eigen::Index> all;
    for (Eigen::Index j = 0; j < p; ++j) {
      if (eligible_[static_cast<std::size_t>(j)]) all.push_back(j);
    }
    std::vector<Eigen::Index> active;
    long used = 0;
    int polishes = 0;
    bool just_polished = false;
    auto budget_left = [&] { return used < spec_.max_sweeps; };
    auto try_polish = [&] {
      if (polishes >= kMaxPolishAttempts) return Polish::rejected;
      Polish outcome = Polish::partial;
      for (int chained = 0; chained < 32 && outcome == Polish::partial; ++chained) {
        ++polishes;
        outcome = polish(v, z);
      }
      return outcome;
    };
    while (budget_left()) {
      ++used;
      const double full_change = sweep(all, v, unit_weights);
      if (full_change < spec_.tolerance) {
        if (just_polished) break;
        const Polish outcome = try_polish();
        if (outcome == Polish::rejected) break;
        just_polished = outcome == Polish::complete;
        continue;
      }
      just_polished = false;
      active.clear();
      for (Eigen::Index j : all) {
        if (beta_[j] != 0.0) active.push_back(j);
      }
      // Cycle on the active set; exact solves on its sign pattern at
      // geometrically spaced sweep counts speed up ill-conditioned cases.
      long inner = 0;
      long next_polish = 8;
      while (budget_left()) {
        ++used;
        ++inner;
        if (sweep(active, v, unit_weights) < spec_.tolerance) break;
        if (inner == next_polish) {
          next_polish *= 2;
          if (try_polish() == Polish::complete) break;
        }
      }
    }
  }

  double sweep(const std::vector<Eigen::Index>& coords, const Vector& v, bool unit_weights) {
    ++sweeps_;
    double max_change = 0.0;
    for (Eigen::Index j : coords) {
      const double h = hess_[j];
      if (h <= 0.0) continue;
      const double old = beta_[j];
      const double u = xs_.col(j).dot(residual_) / n_ + h * old;
      double updated = soft_threshold(u, pen1_[j]) / (h + pen2_[j]);
      updated = std::clamp(updated, lo_[j], hi_[j]);
      const double delta = updated - old;
      if (delta == 0.0) continue;
      beta_[j] = updated;
      if (unit_weights) {
        residual_.noalias() -= delta * xs_.col(j);
      } else {
        residual_.array() -= delta * v.array() * xs_.col(j).array();
      }
      max_change = std::max(max_change, std::abs(delta) * std::sqrt(h));
    }
    const double delta0 = residual_.sum() / sumv_;
    if (delta0 != 0.0) {
      beta0_ += delta0;
      residual_ -= delta0 * v;
      max_change = std::max(max_change, std::abs(delta0) * std::sqrt(sumv_ / n_));
    }
    return max_change;
  }

  // Solves the stationarity equations exactly on the current free set (non-zero
  // coefficients strictly inside their box, signs held fixed). On that face
  // the objective is a smooth quadratic, so moving toward its minimiser until
  // the first coefficient reaches zero or a bound never increases it.
  enum class Polish { rejected, partial, complete };

  Polish polish(const Vector& v, const Vector& z) {
    std::vector<Eigen::Index> free;
    std::vector<Eigen::Index> at_bound;
    for (Eigen::Index j = 0; j < beta_.size(); ++j) {
      if (!eligible_[static_cast<std::size_t>(j)] || beta_[j] == 0.0) continue;
      if (beta_[j] <= lo_[j] || beta_[j] >= hi_[j]) {
        at_bound.push_back(j);
      } else {
        free.push_back(j);
      }
    }
    const auto m = static_cast<Eigen::Index>(free.size());
    if (m == 0 || m > kMaxPolishSize) return Polish::rejected;
    Vector offset = z;
    for (Eigen::Index j : at_bound) offset.noalias() -= beta_[j] * xs_.col(j);
    Matrix xf(xs_.rows(), m);
    for (Eigen::Index c = 0; c < m; ++c) xf.col(c) = xs_.col(free[static_cast<std::size_t>(c)]);
    const Matrix vxf = v.asDiagonal() * xf;

    Matrix a(m + 1, m + 1);
    Vector rhs(m + 1);
    a(0, 0) = sumv_ / n_;
    a.block(0, 1, 1, m) = v.transpose() * xf / n_;
    a.block(1, 0, m, 1) = a.block(0, 1, 1, m).transpose();
    a.block(1, 1, m, m) = xf.transpose() * vxf / n_;
    rhs[0] = v.dot(offset) / n_;
    rhs.tail(m) = vxf.transpose() * offset / n_;
    for (Eigen::Index c = 0; c < m; ++c) {
      const Eigen::Index j = free[static_cast<std::size_t>(c)];
      a(c + 1, c + 1) += pen2_[j];
      rhs[c + 1] -= pen1_[j] * (beta_[j] > 0.0 ? 1.0 : -1.0);
    }
    Vector current(m + 1);
    current[0] = beta0_;
    for (Eigen::Index c = 0; c < m; ++c) current[c + 1] = beta_[free[static_cast<std::size_t>(c)]];
    const double accuracy = 1e-9 * (1.0 + rhs.norm());
    Vector direction;
    double max_step = 1.0;
    const Eigen::LDLT<Matrix> ldlt(a);
    if (ldlt.info() == Eigen::Success) {
      const Vector sol = ldlt.solve(rhs);
      if (sol.allFinite() && (a * sol - rhs).norm() <= accuracy) direction = sol - current;
    }
    if (direction.size() == 0) {
      // Singular face (e.g. as many free lasso coefficients as samples). If
      // a minimiser exists, head for the minimum-norm one; otherwise the
      // objective on the face falls linearly along the null-space part of
      // the right-hand side until some coefficient hits zero.
      const Eigen::CompleteOrthogonalDecomposition<Matrix> cod(a);
      const Vector sol = cod.solve(rhs);
      if (!sol.allFinite()) return Polish::rejected;
      const Vector gap = rhs - a * sol;
      if (gap.norm() <= accuracy) {
        direction = sol - current;
      } else {
        direction = gap;
        max_step = kInf;
      }
    }
    // Largest step keeping signs (where the L1 term is active) and bounds;
    // the blocking coordinate is snapped onto its boundary.
    double step = max_step;
    Eigen::Index blocker = -1;
    double blocker_value = 0.0;
    for (Eigen::Index c = 0; c < m; ++c) {
      const Eigen::Index j = free[static_cast<std::size_t>(c)];
      const double from = current[c + 1];
      const double d = direction[c + 1];
      if (d == 0.0) continue;
      double limit = kInf;
      double target = 0.0;
      if (pen1_[j] > 0.0 && (d > 0.0) != (from > 0.0)) limit = -from / d;
      if (d > 0.0 && (hi_[j] - from) / d < limit) {
        limit = (hi_[j] - from) / d;
        target = hi_[j];
      }
      if (d < 0.0 && (lo_[j] - from) / d < limit) {
        limit = (lo_[j] - from) / d;
        target = lo_[j];
      }
      if (limit < step) {
        step = limit;
        blocker = j;
        blocker_value = target;
      }
    }
    if (!(step > 0.0) || !std::isfinite(step)) return Polish::rejected;
    beta0_ += step * direction[0];
    for (Eigen::Index c = 0; c < m; ++c) {
      const Eigen::Index j = free[static_cast<std::size_t>(c)];
      beta_[j] = std::clamp(current[c + 1] + step * direction[c + 1], lo_[j], hi_[j]);
    }
    if (blocker >= 0) beta_[blocker] = blocker_value;
    residual_ = v.cwiseProduct(z - linear_predictor());
    return blocker >= 0 ? Polish::partial : Polish::complete;
  }

  const Matrix& xs_;
  const Vector& y_;
  Family family_;
  const PenaltySpec& spec_;
  const Vector& lo_;
  const Vector& hi_;
  std::vector<char> eligible_;
  double n_;
  Vector beta_;
  double beta0_ = 0.0;
  Vector hess_;
  Vector pen1_;
  Vector pen2_;
  Vector residual_;
  double sumv_ = 0.0;
  long sweeps_ = 0;
};

void check_binomial_classes(const Dataset& data) {
  if (data.family != Family::binomial) return;
  const double positives = data.y.sum();
  if (positives <= 0.0 || positives >= static_cast<double>(data.y.size())) {
    throw DegenerateResponse("binomial response contains a single class");
  }
}

Vector default_lambdas(double lambda_max, int count, double ratio) {
  Vector out(count);
  if (count == 1) {
    out[0] = lambda_max;
    return out;
  }
  const double log_ratio = std::log(ratio);
  for (int l = 0; l < count; ++l) {
    out[l] = lambda_max * std::exp(log_ratio * static_cast<double>(l) / (count - 1));
  }
  return out;
}

// Exact path for gaussian ridge with a common penalty factor and no bounds:
// b(lambda) = V diag(d / (d^2 + n lambda pf)) U^T (y - ybar).
void closed_form_ridge(const Standardized& st, const Vector& y, const std::vector<char>& eligible,
                       double pf, const Vector& lambdas, PathFit& fit) {
  std::vector<Eigen::Index> cols;
  for (Eigen::Index j = 0; j < st.x.cols(); ++j) {
    if (eligible[static_cast<std::size_t>(j)]) cols.push_back(j);
  }
  const double n = static_cast<double>(st.x.rows());
  const double ybar = y.mean();
  const Eigen::Index L = lambdas.size();
  fit.coefs = Matrix::Zero(st.x.cols(), L);
  fit.intercepts = Vector::Constant(L, ybar);
  if (cols.empty()) return;
  Matrix xe(st.x.rows(), static_cast<Eigen::Index>(cols.size()));
  for (std::size_t c = 0; c < cols.size(); ++c) xe.col(static_cast<Eigen::Index>(c)) = st.x.col(cols[c]);
  const Eigen::BDCSVD<Matrix> svd(xe, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const Vector d = svd.singularValues();
  const Vector uty = svd.matrixU().transpose() * (y.array() - ybar).matrix();
  for (Eigen::Index l = 0; l < L; ++l) {
    Vector scale(d.size());
    for (Eigen::Index k = 0; k < d.size(); ++k) {
      // Directions with (numerically) zero singular value carry no coefficient.
      scale[k] = d[k] > 1e-12 * d[0] ? d[k] / (d[k] * d[k] + n * lambdas[l] * pf) : 0.0;
    }
    const Vector b = svd.matrixV() * scale.cwiseProduct(uty);
    double shift = 0.0;
    for (std::size_t c = 0; c < cols.size(); ++c) {
      const Eigen::Index j = cols[c];
      const double coef = b[static_cast<Eigen::Index>(c)] / st.sds[j];
      fit.coefs(j, l) = coef;
      shift += coef * st.means[j];
    }
    fit.intercepts[l] = ybar - shift;
  }
}

}  // namespace

PenaltySpec PenaltySpec::resolved(Eigen::Index p) const {
  PenaltySpec out = *this;
  if (!std::isfinite(alpha) || alpha < 0.0 || alpha > 1.0) {
    throw InvalidParameter("elastic-net alpha must be in [0, 1]");
  }
  if (nlambda < 1) throw InvalidParameter("nlambda must be at least 1");
  if (lambda_min_ratio && (!(*lambda_min_ratio > 0.0) || *lambda_min_ratio >= 1.0)) {
    throw InvalidParameter("lambda_min_ratio must be in (0, 1)");
  }
  if (out.penalty_factors.size() == 0) out.penalty_factors = Vector::Ones(p);
  if (out.lower.size() == 0) out.lower = Vector::Constant(p, -kInf);
  if (out.upper.size() == 0) out.upper = Vector::Constant(p, kInf);
  if (out.penalty_factors.size() != p || out.lower.size() != p || out.upper.size() != p) {
    throw InvalidParameter("penalty factors and bounds must have one entry per feature");
  }
  for (Eigen::Index j = 0; j < p; ++j) {
    if (!(out.penalty_factors[j] >= 0.0) || !std::isfinite(out.penalty_factors[j])) {
      throw InvalidParameter("penalty factors must be finite and non-negative");
    }
    if (!(out.lower[j] <= 0.0) || !(out.upper[j] >= 0.0)) {
      throw InvalidParameter("bounds must satisfy lower <= 0 <= upper (feature " +
                             std::to_string(j + 1) + ")");
    }
  }
  return out;
}

double soft_threshold(double z, double gamma) {
  if (z > gamma) return z - gamma;
  if (z < -gamma) return z + gamma;
  return 0.0;
}

PathFit fit_path(const Dataset& data, const PenaltySpec& spec_in, std::span<const double> lambdas) {
  data.validate();
  check_binomial_classes(data);
  const Eigen::Index p = data.p();
  const Eigen::Index n = data.n();
  if (n < 2) throw InvalidParameter("fit_path: need at least 2 samples");
  PenaltySpec spec = spec_in.resolved(p);
  if ((spec.penalty_factors.array() == 0.0).all() && p > n) {
    throw InvalidParameter("all coefficients unpenalised with p > n: the problem is unbounded");
  }

  const Standardized st = standardize_columns(data.x);
  Vector lo(p);
  Vector hi(p);
  std::vector<char> eligible(static_cast<std::size_t>(p));
  std::vector<char> unpenalised_only(static_cast<std::size_t>(p));
  bool any_penalised = false;
  for (Eigen::Index j = 0; j < p; ++j) {
    const auto js = static_cast<std::size_t>(j);
    eligible[js] = !st.constant[js];
    // Constant columns carry a zero coefficient; their bounds are irrelevant.
    lo[j] = eligible[js] ? spec.lower[j] * st.sds[j] : 0.0;
    hi[j] = eligible[js] ? spec.upper[j] * st.sds[j] : 0.0;
    unpenalised_only[js] = eligible[js] && spec.penalty_factors[j] == 0.0;
    any_penalised = any_penalised || (eligible[js] && spec.penalty_factors[j] > 0.0);
  }

  PathFit fit;
  fit.family = data.family;
  fit.means = st.means;
  fit.sds = st.sds;

  bool all_unbounded = true;
  for (Eigen::Index j = 0; j < p; ++j) {
    all_unbounded = all_unbounded && std::isinf(spec.lower[j]) && std::isinf(spec.upper[j]);
  }
  const bool use_closed_form = spec.closed_form_ridge && data.family == Family::gaussian &&
                               spec.alpha == 0.0 && all_unbounded &&
                               all_equal_positive(spec.penalty_factors, eligible);

  CoordinateSolver solver(st.x, data.y, data.family, spec, lo, hi, unpenalised_only);
  if (!lambdas.empty()) {
    fit.lambdas = Eigen::Map<const Vector>(lambdas.data(), static_cast<Eigen::Index>(lambdas.size()));
    for (Eigen::Index l = 0; l < fit.lambdas.size(); ++l) {
      if (!(fit.lambdas[l] >= 0.0) || (l > 0 && fit.lambdas[l] > fit.lambdas[l - 1])) {
        throw InvalidParameter("lambdas must be non-negative and decreasing");
      }
    }
  } else if (!any_penalised) {
    fit.lambdas = Vector::Zero(1);
  } else {
    // Null model: intercept plus unpenalised columns.
    solver.solve(0.0);
    const Vector g = solver.score();
    const double alpha_eff = std::max(spec.alpha, kRidgeAlphaFloor);
    double lambda_max = 0.0;
    for (Eigen::Index j = 0; j < p; ++j) {
      const auto js = static_cast<std::size_t>(j);
      if (!eligible[js] || spec.penalty_factors[j] == 0.0) continue;
      const bool can_move = (g[j] > 0.0 && hi[j] > 0.0) || (g[j] < 0.0 && lo[j] < 0.0);
      if (can_move) {
        lambda_max = std::max(lambda_max, std::abs(g[j]) / (spec.penalty_factors[j] * alpha_eff));
      }
    }
    // No penalised coefficient can leave zero: any positive lambda gives the null model.
    if (!(lambda_max > 0.0)) lambda_max = 1.0;
    const double ratio = spec.lambda_min_ratio.value_or(n < p ? 0.01 : 1e-4);
    fit.lambdas = default_lambdas(lambda_max, spec.nlambda, ratio);
  }

  const Eigen::Index L = fit.lambdas.size();
  if (use_closed_form) {
    double pf = 1.0;
    for (Eigen::Index j = 0; j < p; ++j) {
      if (eligible[static_cast<std::size_t>(j)]) {
        pf = spec.penalty_factors[j];
        break;
      }
    }
    closed_form_ridge(st, data.y, eligible, pf, fit.lambdas, fit);
    fit.spec = std::move(spec);
    return fit;
  }

  solver.set_eligible(eligible);
  fit.coefs = Matrix::Zero(p, L);
  fit.intercepts.resize(L);
  for (Eigen::Index l = 0; l < L; ++l) {
    solver.solve(fit.lambdas[l]);
    const Vector& b = solver.beta();
    double shift = 0.0;
    for (Eigen::Index j = 0; j < p; ++j) {
      if (!eligible[static_cast<std::size_t>(j)] || b[j] == 0.0) continue;
      const double coef = b[j] / st.sds[j];
      fit.coefs(j, l) = coef;
      shift += coef * st.means[j];
    }
    fit.intercepts[l] = solver.beta0() - shift;
  }
  fit.sweeps = solver.sweeps();
  fit.spec = std::move(spec);
  return fit;
}

Vector predict_linear(const PathFit& fit, Eigen::Index lambda_index, const Matrix& xnew) {
  if (xnew.cols() != fit.coefs.rows()) {
    throw InvalidParameter("predict_linear: expected " + std::to_string(fit.coefs.rows()) +
                           " columns, got " + std::to_string(xnew.cols()));
  }
  if (lambda_index < 0 || lambda_index >= fit.size()) {
    throw InvalidParameter("predict_linear: lambda index out of range");
  }
  Vector eta = xnew * fit.coefs.col(lambda_index);
  eta.array() += fit.intercepts[lambda_index];
  return eta;
}

std::vector<Eigen::Index> FoldPlan::train_rows(int fold) const {
  std::vector<Eigen::Index> rows;
  for (std::size_t i = 0; i < assignments.size(); ++i) {
    if (assignments[i] != fold) rows.push_back(static_cast<Eigen::Index>(i));
  }
  return rows;
}

std::vector<Eigen::Index> FoldPlan::test_rows(int fold) const {
  std::vector<Eigen::Index> rows;
  for (std::size_t i = 0; i < assignments.size(); ++i) {
    if (assignments[i] == fold) rows.push_back(static_cast<Eigen::Index>(i));
  }
  return rows;
}

void FoldPlan::validate(Eigen::Index n) const {
  if (k < 2) throw InvalidParameter("cross-validation needs at least 2 folds");
  if (static_cast<Eigen::Index>(assignments.size()) != n) {
    throw InvalidParameter("fold plan covers " + std::to_string(assignments.size()) +
                           " samples, data has " + std::to_string(n));
  }
  std::vector<int> counts(static_cast<std::size_t>(k), 0);
  for (int a : assignments) {
    if (a < 0 || a >= k) throw InvalidParameter("fold id out of range");
    ++counts[static_cast<std::size_t>(a)];
  }
  for (int c : counts) {
    if (c == 0) throw InvalidParameter("every fold must contain at least one sample");
  }
}

FoldPlan make_folds(const Vector& y, Family family, int k, const RngStream& rng_in) {
  if (k < 2) throw InvalidParameter("cross-validation needs at least 2 folds");
  const auto n = static_cast<std::size_t>(y.size());
  if (n < static_cast<std::size_t>(k)) {
    throw InvalidParameter("cannot split " + std::to_string(n) + " samples into " +
                           std::to_string(k) + " folds");
  }
  RngStream rng = rng_in;
  FoldPlan plan;
  plan.k = k;
  plan.seed = rng.seed();
  plan.label = rng.label();
  plan.assignments.assign(n, 0);
  if (family == Family::gaussian) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    rng.shuffle(order);
    for (std::size_t pos = 0; pos < n; ++pos) plan.assignments[order[pos]] = static_cast<int>(pos % k);
    return plan;
  }
  std::vector<std::size_t> negatives;
  std::vector<std::size_t> positives;
  for (std::size_t i = 0; i < n; ++i) (y[static_cast<Eigen::Index>(i)] > 0.5 ? positives : negatives).push_back(i);
  if (negatives.size() < static_cast<std::size_t>(k) || positives.size() < static_cast<std::size_t>(k)) {
    throw DegenerateFolds("stratified " + std::to_string(k) + "-fold split needs at least " +
                          std::to_string(k) + " samples per class (have " +
                          std::to_string(negatives.size()) + " and " +
                          std::to_string(positives.size()) + ")");
  }
  rng.shuffle(negatives);
  rng.shuffle(positives);
  std::size_t pos = 0;
  for (std::size_t i : negatives) plan.assignments[i] = static_cast<int>(pos++ % k);
  for (std::size_t i : positives) plan.assignments[i] = static_cast<int>(pos++ % k);
  return plan;
}

std::pair<Eigen::Index, Eigen::Index> select_lambda(const Vector& loss_mean, const Vector& loss_se) {
  if (loss_mean.size() == 0 || loss_se.size() != loss_mean.size()) {
    throw InvalidParameter("select_lambda: loss vectors must be non-empty and equal length");
  }
  Eigen::Index idx_min = 0;
  for (Eigen::Index l = 1; l < loss_mean.size(); ++l) {
    if (loss_mean[l] < loss_mean[idx_min]) idx_min = l;
  }
  const double threshold = loss_mean[idx_min] + loss_se[idx_min];
  Eigen::Index idx_1se = idx_min;
  for (Eigen::Index l = 0; l <= idx_min; ++l) {
    if (loss_mean[l] <= threshold) {
      idx_1se = l;
      break;
    }
  }
  return {idx_min, idx_1se};
}

CvFit cv_fit(const Dataset& data, const PenaltySpec& spec, const FoldPlan& folds) {
  folds.validate(data.n());
  CvFit out;
  out.path = fit_path(data, spec);
  out.folds = folds;
  const Eigen::Index L = out.path.size();
  const Eigen::Index n = data.n();
  out.cv_eta = Matrix::Zero(n, L);
  Matrix fold_loss(folds.k, L);
  std::vector<double> fold_size(static_cast<std::size_t>(folds.k));
  const std::vector<double> lambdas(out.path.lambdas.data(), out.path.lambdas.data() + L);

  parallel_for(static_cast<std::size_t>(folds.k), [&](std::size_t f) {
    const int fold = static_cast<int>(f);
    const auto test = folds.test_rows(fold);
    const Dataset train = data.subset(folds.train_rows(fold));
    const PathFit fold_fit = fit_path(train, spec, lambdas);
    const Dataset held_out = data.subset(test);
    Matrix eta = held_out.x * fold_fit.coefs;
    eta.rowwise() += fold_fit.intercepts.transpose();
    for (std::size_t r = 0; r < test.size(); ++r) out.cv_eta.row(test[r]) = eta.row(static_cast<Eigen::Index>(r));
    for (Eigen::Index l = 0; l < L; ++l) {
      fold_loss(fold, l) = mean_deviance(data.family, held_out.y, link_inverse(data.family, Vector(eta.col(l))));
    }
    fold_size[f] = static_cast<double>(test.size());
  });

  out.cv_loss_mean.resize(L);
  out.cv_loss_se.resize(L);
  const double total = static_cast<double>(n);
  for (Eigen::Index l = 0; l < L; ++l) {
    double mean = 0.0;
    for (int f = 0; f < folds.k; ++f) mean += fold_size[static_cast<std::size_t>(f)] * fold_loss(f, l);
    mean /= total;
    double var = 0.0;
    for (int f = 0; f < folds.k; ++f) {
      const double d = fold_loss(f, l) - mean;
      var += fold_size[static_cast<std::size_t>(f)] * d * d;
    }
    var /= total;
    out.cv_loss_mean[l] = mean;
    out.cv_loss_se[l] = std::sqrt(var / (folds.k - 1));
  }
  std::tie(out.idx_min, out.idx_1se) = select_lambda(out.cv_loss_mean, out.cv_loss_se);
  return out;
}

namespace {

struct StandardisedState {
  Standardized st;
  Vector beta;
  double beta0 = 0.0;
  Vector mu;
};

StandardisedState to_standardised(const Dataset& data, const PathFit& fit, Eigen::Index l) {
  if (l < 0 || l >= fit.size()) throw InvalidParameter("lambda index out of range");
  StandardisedState s;
  s.st = standardize_columns(data.x);
  s.beta = fit.coefs.col(l).cwiseProduct(s.st.sds);
  s.beta0 = fit.intercepts[l] + fit.coefs.col(l).dot(s.st.means);
  Vector eta = s.st.x * s.beta;
  eta.array() += s.beta0;
  s.mu = link_inverse(data.family, eta);
  return s;
}

}  // namespace

double kkt_residual(const Dataset& data, const PathFit& fit, Eigen::Index l) {
  const auto s = to_standardised(data, fit, l);
  const double n = static_cast<double>(data.n());
  const Vector g = s.st.x.transpose() * (data.y - s.mu) / n;
  const double lambda = fit.lambdas[l];
  const double alpha = fit.spec.alpha;
  double worst = std::abs((data.y - s.mu).sum() / n);
  for (Eigen::Index j = 0; j < data.p(); ++j) {
    if (s.st.constant[static_cast<std::size_t>(j)]) continue;
    const double pf = fit.spec.penalty_factors[j];
    const double b = s.beta[j];
    const double lo = fit.spec.lower[j] * s.st.sds[j];
    const double hi = fit.spec.upper[j] * s.st.sds[j];
    const double tol_bound = 1e-10 * (1.0 + std::abs(b));
    const double l1 = lambda * pf * alpha;
    const double smooth = -g[j] + lambda * pf * (1.0 - alpha) * b;
    double violation = 0.0;
    if (b == 0.0) {
      // Directional derivatives from zero must be non-negative where feasible.
      const double up = smooth + l1;     // derivative moving up
      const double down = -smooth + l1;  // derivative moving down
      if (hi > 0.0) violation = std::max(violation, -up);
      if (lo < 0.0) violation = std::max(violation, -down);
    } else {
      const double grad = smooth + l1 * (b > 0.0 ? 1.0 : -1.0);
      if (std::abs(b - hi) <= tol_bound) {
        violation = std::max(0.0, grad);
      } else if (std::abs(b - lo) <= tol_bound) {
        violation = std::max(0.0, -grad);
      } else {
        violation = std::abs(grad);
      }
    }
    worst = std::max(worst, violation);
  }
  return worst;
}

double penalized_objective(const Dataset& data, const PathFit& fit, Eigen::Index l) {
  const auto s = to_standardised(data, fit, l);
  const double n = static_cast<double>(data.n());
  double loss = 0.0;
  Vector eta = s.st.x * s.beta;
  eta.array() += s.beta0;
  for (Eigen::Index i = 0; i < data.n(); ++i) {
    if (data.family == Family::gaussian) {
      loss += 0.5 * (data.y[i] - eta[i]) * (data.y[i] - eta[i]);
    } else {
      const double e = eta[i];
      const double softplus = e > 0.0 ? e + std::log1p(std::exp(-e)) : std::log1p(std::exp(e));
      loss += softplus - data.y[i] * e;
    }
  }
  double pen = 0.0;
  for (Eigen::Index j = 0; j < data.p(); ++j) {
    const double b = s.beta[j];
    pen += fit.spec.penalty_factors[j] *
           (fit.spec.alpha * std::abs(b) + 0.5 * (1.0 - fit.spec.alpha) * b * b);
  }
  return loss / n + fit.lambdas[l] * pen;
}

}  // namespace priorstack
