#include "priorstack/calibration.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include "priorstack/errors.hpp"
#include "priorstack/solver.hpp"

namespace priorstack {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

double sign(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

double intercept_only_eta(Family family, const Vector& y) {
  const double mu = intercept_only_mu(family, y);
  if (family == Family::gaussian) return mu;
  const double m = std::clamp(mu, kProbClamp, 1.0 - kProbClamp);
  return std::log(m / (1.0 - m));
}

CalibratedSource zero_source(CalibrationMethod method, const Dataset& data) {
  CalibratedSource out;
  out.method = method;
  out.gamma = Vector::Zero(data.p());
  out.alpha_k = intercept_only_eta(data.family, data.y);
  out.all_zero = true;
  out.deviance = mean_deviance(data.family, data.y,
                               Vector::Constant(data.n(), link_inverse(data.family, out.alpha_k)));
  if (method == CalibrationMethod::exponential) {
    out.theta = 0.0;
    out.tau = 0.0;
  }
  return out;
}

double in_sample_deviance(const Dataset& data, const CalibratedSource& source) {
  return mean_deviance(data.family, data.y, link_inverse(data.family, calibrated_eta(source, data.x)));
}

void check_prior(const Dataset& data, const Vector& z) {
  if (z.size() != data.p()) {
    throw InvalidParameter("prior has " + std::to_string(z.size()) + " entries for " +
                           std::to_string(data.p()) + " features");
  }
  if (!z.allFinite()) throw DataError("prior effects must be finite");
}

CalibratedSource fit_exponential(const Dataset& data, const Vector& z, const CalibrationOptions& options) {
  if (options.tau_grid.empty()) throw InvalidParameter("tau grid must not be empty");
  PenaltySpec spec;
  spec.penalty_factors = Vector::Zero(1);
  spec.lower = Vector::Zero(1);
  const std::vector<double> no_penalty{0.0};

  CalibratedSource best;
  best.method = CalibrationMethod::exponential;
  best.deviance = kInf;
  Dataset single;
  single.family = data.family;
  single.y = data.y;
  for (double tau : options.tau_grid) {
    if (!(tau >= 0.0) || !std::isfinite(tau)) throw InvalidParameter("tau grid values must be finite and >= 0");
    single.x = data.x * exponential_gamma(z, 1.0, tau);
    const PathFit fit = fit_path(single, spec, no_penalty);
    CalibratedSource cand;
    cand.method = CalibrationMethod::exponential;
    cand.theta = fit.coefs(0, 0);
    cand.tau = tau;
    cand.alpha_k = fit.intercepts[0];
    cand.gamma = exponential_gamma(z, *cand.theta, tau);
    cand.deviance = in_sample_deviance(data, cand);
    // Strict comparison: ties keep the earlier grid value.
    if (cand.deviance < best.deviance) best = std::move(cand);
  }
  return best;
}

CalibratedSource fit_isotonic(const Dataset& data, const Vector& z, const RngStream& rng,
                              const CalibrationOptions& options) {
  std::vector<Eigen::Index> nonzero;
  for (Eigen::Index j = 0; j < z.size(); ++j) {
    if (z[j] != 0.0) nonzero.push_back(j);
  }
  const auto m = static_cast<Eigen::Index>(nonzero.size());
  Matrix xs(data.n(), m);
  Vector zs(m);
  for (Eigen::Index c = 0; c < m; ++c) {
    xs.col(c) = data.x.col(nonzero[static_cast<std::size_t>(c)]);
    zs[c] = z[nonzero[static_cast<std::size_t>(c)]];
  }
  const CumsumDesign design = build_cumsum_design(xs, zs);

  Dataset wdata;
  wdata.family = data.family;
  wdata.x = design.w;
  wdata.y = data.y;
  PenaltySpec spec;
  spec.alpha = options.isotonic_alpha;
  spec.lower = Vector::Zero(m);
  spec.upper = Vector::Zero(m);
  spec.lower.head(design.q).setConstant(-kInf);
  spec.upper.tail(m - design.q).setConstant(kInf);

  // Internal CV needs every fold to hold both classes; shrink K on tiny data.
  Eigen::Index k = std::min<Eigen::Index>(options.isotonic_folds, data.n());
  if (data.family == Family::binomial) {
    const auto pos = static_cast<Eigen::Index>(data.y.sum());
    k = std::min({k, pos, data.n() - pos});
  }
  PathFit path;
  Eigen::Index idx = 0;
  if (k >= 2) {
    const FoldPlan folds = make_folds(data.y, data.family, static_cast<int>(k), rng.child("isotonic-cv"));
    CvFit cv = cv_fit(wdata, spec, folds);
    idx = cv.idx_min;
    path = std::move(cv.path);
  } else {
    path = fit_path(wdata, spec);
    idx = path.size() - 1;
  }

  CalibratedSource out;
  out.method = CalibrationMethod::isotonic;
  out.delta = path.coefs.col(idx);
  out.lambda = path.lambdas[idx];
  out.alpha_k = path.intercepts[idx];
  const Vector sorted = delta_to_sorted_gamma(out.delta, design.q);
  out.gamma = Vector::Zero(data.p());
  for (Eigen::Index j = 0; j < m; ++j) {
    out.gamma[nonzero[static_cast<std::size_t>(design.ordering[static_cast<std::size_t>(j)])]] = sorted[j];
  }
  out.deviance = in_sample_deviance(data, out);
  return out;
}

}  // namespace

std::string_view to_string(CalibrationMethod method) {
  return method == CalibrationMethod::exponential ? "exponential" : "isotonic";
}

CalibrationMethod parse_calibration_method(std::string_view name) {
  if (name == "exponential" || name == "exp") return CalibrationMethod::exponential;
  if (name == "isotonic" || name == "iso") return CalibrationMethod::isotonic;
  throw InvalidParameter("unknown calibration method '" + std::string(name) + "'");
}

std::vector<double> default_tau_grid() {
  return {0.0, 0.125, 0.25, 0.5, std::sqrt(0.5), 1.0, std::sqrt(2.0), 2.0, 4.0, 8.0};
}

RescaledPrior rescale_prior(const Vector& z) {
  if (!z.allFinite()) throw DataError("prior effects must be finite");
  RescaledPrior out{z, false};
  const double scale = z.size() == 0 ? 0.0 : z.cwiseAbs().maxCoeff();
  if (scale == 0.0) {
    out.all_zero = true;
    return out;
  }
  out.z = z / scale;
  return out;
}

Vector exponential_gamma(const Vector& z, double theta, double tau) {
  Vector out(z.size());
  for (Eigen::Index j = 0; j < z.size(); ++j) {
    out[j] = z[j] == 0.0 ? 0.0 : theta * sign(z[j]) * std::pow(std::abs(z[j]), tau);
  }
  return out;
}

Vector calibrated_eta(const CalibratedSource& source, const Matrix& x, bool with_intercept) {
  if (x.cols() != source.gamma.size()) {
    throw InvalidParameter("calibrated source expects " + std::to_string(source.gamma.size()) +
                           " features, got " + std::to_string(x.cols()));
  }
  Vector eta = x * source.gamma;
  if (with_intercept) eta.array() += source.alpha_k;
  return eta;
}

CalibratedSource calibrate_exponential(const Dataset& data, const Vector& z, const CalibrationOptions& options) {
  check_prior(data, z);
  if (z.isZero(0.0)) return zero_source(CalibrationMethod::exponential, data);
  CalibratedSource best = fit_exponential(data, z, options);
  if (options.try_inverted) {
    CalibratedSource flipped = fit_exponential(data, -z, options);
    if (flipped.deviance < best.deviance) {
      best = std::move(flipped);
      best.inverted = true;
    }
  }
  return best;
}

CumsumDesign build_cumsum_design(const Matrix& x, const Vector& z) {
  if (x.cols() != z.size()) throw InvalidParameter("build_cumsum_design: z length must equal column count");
  CumsumDesign d;
  const Eigen::Index p = z.size();
  d.ordering.resize(static_cast<std::size_t>(p));
  std::iota(d.ordering.begin(), d.ordering.end(), Eigen::Index{0});
  std::stable_sort(d.ordering.begin(), d.ordering.end(), [&](Eigen::Index a, Eigen::Index b) { return z[a] < z[b]; });
  d.q = static_cast<Eigen::Index>((z.array() < 0.0).count());
  d.w.resize(x.rows(), p);
  auto col = [&](Eigen::Index j) { return x.col(d.ordering[static_cast<std::size_t>(j)]); };
  for (Eigen::Index j = 0; j < d.q; ++j) {
    d.w.col(j) = j == 0 ? Vector(col(0)) : Vector(d.w.col(j - 1) + col(j));
  }
  for (Eigen::Index j = p - 1; j >= d.q; --j) {
    d.w.col(j) = j == p - 1 ? Vector(col(j)) : Vector(d.w.col(j + 1) + col(j));
  }
  return d;
}

Vector delta_to_sorted_gamma(const Vector& delta, Eigen::Index q) {
  const Eigen::Index p = delta.size();
  if (q < 0 || q > p) throw InvalidParameter("delta_to_sorted_gamma: q out of range");
  Vector g(p);
  double acc = 0.0;
  for (Eigen::Index j = q - 1; j >= 0; --j) g[j] = acc += delta[j];
  acc = 0.0;
  for (Eigen::Index j = q; j < p; ++j) g[j] = acc += delta[j];
  return g;
}

CalibratedSource calibrate_isotonic(const Dataset& data, const Vector& z, const RngStream& rng,
                                    const CalibrationOptions& options) {
  check_prior(data, z);
  if (z.isZero(0.0)) return zero_source(CalibrationMethod::isotonic, data);
  CalibratedSource best = fit_isotonic(data, z, rng, options);
  if (options.try_inverted) {
    CalibratedSource flipped = fit_isotonic(data, -z, rng.child("inverted"), options);
    if (flipped.deviance < best.deviance) {
      best = std::move(flipped);
      best.inverted = true;
    }
  }
  return best;
}

CalibratedSource calibrate(CalibrationMethod method, const Dataset& data, const Vector& z,
                           const RngStream& rng, const CalibrationOptions& options) {
  return method == CalibrationMethod::exponential ? calibrate_exponential(data, z, options)
                                                  : calibrate_isotonic(data, z, rng, options);
}

double wilcoxon_signed_rank_one_sided(const Vector& d, WilcoxonMethod method) {
  if (!d.allFinite()) throw InvalidParameter("wilcoxon: differences must be finite");
  std::vector<double> mags;
  std::vector<bool> positive;
  for (Eigen::Index i = 0; i < d.size(); ++i) {
    if (d[i] == 0.0) continue;
    mags.push_back(std::abs(d[i]));
    positive.push_back(d[i] > 0.0);
  }
  const std::size_t n = mags.size();
  if (n == 0) return 1.0;

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return mags[a] < mags[b]; });
  // Ranks are stored doubled so mid-ranks stay integral.
  std::vector<long> rank2(n);
  double tie_term = 0.0;
  bool ties = false;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j + 1 < n && mags[order[j + 1]] == mags[order[i]]) ++j;
    const auto t = static_cast<double>(j - i + 1);
    if (j > i) ties = true;
    tie_term += t * t * t - t;
    for (std::size_t r = i; r <= j; ++r) rank2[order[r]] = static_cast<long>(i + j + 2);
    i = j + 1;
  }
  long w2 = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (positive[i]) w2 += rank2[i];
  }

  if (method == WilcoxonMethod::automatic) {
    method = (!ties && n <= 25) ? WilcoxonMethod::exact : WilcoxonMethod::normal;
  }
  if (method == WilcoxonMethod::exact) {
    const long total = std::accumulate(rank2.begin(), rank2.end(), 0L);
    std::vector<double> count(static_cast<std::size_t>(total + 1), 0.0);
    count[0] = 1.0;
    long reach = 0;
    for (long r : rank2) {
      reach += r;
      for (long s = reach; s >= r; --s) count[static_cast<std::size_t>(s)] += count[static_cast<std::size_t>(s - r)];
    }
    double below = 0.0;
    for (long s = 0; s <= w2; ++s) below += count[static_cast<std::size_t>(s)];
    return std::min(1.0, std::ldexp(below, -static_cast<int>(n)));
  }

  const auto nd = static_cast<double>(n);
  const double mean = nd * (nd + 1.0) / 4.0;
  const double var = nd * (nd + 1.0) * (2.0 * nd + 1.0) / 24.0 - tie_term / 48.0;
  if (!(var > 0.0)) return 1.0;
  const double zstat = (0.5 * static_cast<double>(w2) - mean + 0.5) / std::sqrt(var);
  return std::clamp(0.5 * std::erfc(-zstat / std::sqrt(2.0)), 0.0, 1.0);
}

CalibratedSource filter_source(const Dataset& data, CalibratedSource source, double significance) {
  if (source.all_zero || source.gamma.isZero(0.0)) {
    source.pvalue = 1.0;
    source.retained = false;
    return source;
  }
  const Vector mu_null = Vector::Constant(data.n(), intercept_only_mu(data.family, data.y));
  return filter_source_heldout(data.y, data.family, source, calibrated_eta(source, data.x), mu_null, significance);
}

CalibratedSource filter_source_heldout(const Vector& y, Family family, CalibratedSource source, const Vector& eta,
                                       const Vector& mu_null, double significance) {
  if (eta.size() != y.size() || mu_null.size() != y.size()) {
    throw InvalidParameter("filter_source_heldout: predictions and targets differ in length");
  }
  if (source.all_zero || source.gamma.isZero(0.0)) {
    source.pvalue = 1.0;
    source.retained = false;
    return source;
  }
  const Vector diff = deviance_residuals(family, y, link_inverse(family, eta)) - deviance_residuals(family, y, mu_null);
  source.pvalue = wilcoxon_signed_rank_one_sided(diff);
  source.retained = source.pvalue <= significance;
  return source;
}

}  // namespace priorstack
