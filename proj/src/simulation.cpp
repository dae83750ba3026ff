#include "priorstack/simulation.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include <boost/math/distributions/normal.hpp>

#include "priorstack/errors.hpp"

namespace priorstack {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

void require(bool ok, const std::string& message) {
  if (!ok) throw InvalidParameter(message);
}

Vector draw_response(Family family, const Vector& eta, RngStream& noise) {
  Vector y(eta.size());
  for (Eigen::Index i = 0; i < eta.size(); ++i) {
    if (family == Family::gaussian) {
      y[i] = eta[i] + noise.normal();
    } else {
      y[i] = noise.bernoulli(link_inverse(Family::binomial, eta[i])) ? 1.0 : 0.0;
    }
  }
  return y;
}

Dataset make_dataset(Family family, Matrix x, Vector y) {
  Dataset d;
  d.family = family;
  d.x = std::move(x);
  d.y = std::move(y);
  return d;
}

void split_target(SimOutput& out, Family family, const Matrix& x, const Vector& y, int n_train) {
  const Eigen::Index n_test = x.rows() - n_train;
  out.target_train = make_dataset(family, x.topRows(n_train), y.head(n_train));
  out.target_test = make_dataset(family, x.bottomRows(n_test), y.tail(n_test));
}

double pearson(const Vector& a, const Vector& b) {
  const Vector ca = a.array() - a.mean();
  const Vector cb = b.array() - b.mean();
  const double denom = ca.norm() * cb.norm();
  return denom > 0.0 ? ca.dot(cb) / denom : 0.0;
}

void fill_correlations(SimOutput& out) {
  out.source_coef_correlations.resize(out.source_beta.cols());
  for (Eigen::Index k = 0; k < out.source_beta.cols(); ++k) {
    out.source_coef_correlations[k] = pearson(out.true_beta, out.source_beta.col(k));
  }
}

/// Centre and scale to unit sample sd (n - 1 denominator).
Vector standardize_scores(const Vector& z) {
  Vector out = z.array() - z.mean();
  if (z.size() < 2) return out;
  const double sd = std::sqrt(out.squaredNorm() / static_cast<double>(z.size() - 1));
  if (sd > 0.0) out /= sd;
  return out;
}

Vector internal_response(Family family, double w, const Vector& zstar, RngStream& noise) {
  Vector y(zstar.size());
  const double a = std::sqrt(w);
  const double b = std::sqrt(1.0 - w);
  for (Eigen::Index i = 0; i < zstar.size(); ++i) {
    const double score = a * zstar[i] + b * noise.normal();
    // Binomial classes are the rounded probabilities, i.e. logistic(score) > 0.5.
    y[i] = family == Family::gaussian ? score : (score > 0.0 ? 1.0 : 0.0);
  }
  return y;
}

std::string replicate_label(int replicate) { return "replicate-" + std::to_string(replicate); }

}  // namespace

void ExternalSimConfig::validate() const {
  require(std::isfinite(h) && h >= 0.0, "h must be finite and non-negative");
  require(K >= 1 && Ka >= 0 && Ka <= K, "need 0 <= Ka <= K and K >= 1");
  require(p >= 3 && s >= 1 && 3 * s <= p, "need 1 <= s <= p/3");
  require(n_target >= 2 && n_source >= 2 && n_test >= 1, "sample sizes too small");
  require(source_alpha >= 0.0 && source_alpha <= 1.0, "source alpha must be in [0, 1]");
}

void InternalSimConfig::validate() const {
  require(rho_x >= 0.0 && rho_x < 1.0, "rho_x must be in [0, 1)");
  require(rho_beta >= 0.0 && rho_beta < 1.0, "rho_beta must be in [0, 1)");
  require(pi > 0.0 && pi <= 1.0, "pi must be in (0, 1]");
  require(w >= 0.0 && w <= 1.0, "w must be in [0, 1]");
  require(p >= 1 && n_target >= 2 && n_source >= 2 && n_test >= 1, "sample sizes too small");
  require(source_alpha >= 0.0 && source_alpha <= 1.0, "source alpha must be in [0, 1]");
}

PriorEffects derive_priors(const std::vector<Dataset>& sources, double alpha, const RngStream& rng, int folds) {
  PriorEffects priors;
  if (sources.empty()) return priors;
  priors.z.resize(sources.front().p(), static_cast<Eigen::Index>(sources.size()));
  parallel_for(sources.size(), [&](std::size_t k) {
    const Dataset& src = sources[k];
    PenaltySpec spec;
    spec.alpha = alpha;
    const int kk = feasible_folds(src.y, src.family, folds);
    const CvFit cv = cv_fit(src, spec, make_folds(src.y, src.family, kk, rng.child("source-" + std::to_string(k + 1))));
    priors.z.col(static_cast<Eigen::Index>(k)) = cv.path.coefs.col(cv.idx_min);
  });
  for (std::size_t k = 0; k < sources.size(); ++k) priors.names.push_back("source" + std::to_string(k + 1));
  return priors;
}

SimOutput simulate_external(const ExternalSimConfig& cfg, const RngStream& rng) {
  cfg.validate();
  const Eigen::Index p = cfg.p;
  const Eigen::Index s = cfg.s;
  const CorrelationSpec corr{static_cast<std::size_t>(p), 0.5};

  SimOutput out;
  out.true_beta = Vector::Zero(p);
  out.true_beta.head(s).setConstant(0.5);
  out.source_beta.resize(p, cfg.K);
  for (int k = 0; k < cfg.K; ++k) {
    RngStream coef = rng.child("coef-" + std::to_string(k + 1));
    Vector sign(p);
    for (Eigen::Index j = 0; j < p; ++j) sign[j] = coef.bernoulli(0.5) ? -1.0 : 1.0;
    Vector beta(p);
    if (k < cfg.Ka) {
      beta = sign * (cfg.h / static_cast<double>(p));
      beta.head(s).array() += 0.5;
    } else {
      // Causal and non-causal roles swap on the first 2s features; the tail
      // gets s causal entries at random positions.
      beta = sign * (2.0 * cfg.h / static_cast<double>(p));
      beta.segment(s, s).array() += 0.5;
      std::vector<char> causal(static_cast<std::size_t>(p - 2 * s), 0);
      std::fill_n(causal.begin(), s, 1);
      coef.shuffle(causal);
      for (Eigen::Index j = 2 * s; j < p; ++j) {
        if (causal[static_cast<std::size_t>(j - 2 * s)]) beta[j] += 0.5;
      }
    }
    out.source_beta.col(k) = beta;
  }

  RngStream target_x = rng.child("target-x");
  RngStream target_noise = rng.child("target-noise");
  const Matrix x0 = ar1_sample(target_x, static_cast<std::size_t>(cfg.n_target + cfg.n_test), corr);
  const Vector y0 = draw_response(cfg.family, x0 * out.true_beta, target_noise);
  split_target(out, cfg.family, x0, y0, cfg.n_target);

  out.sources.resize(static_cast<std::size_t>(cfg.K));
  for (int k = 0; k < cfg.K; ++k) {
    RngStream xs = rng.child("source-x-" + std::to_string(k + 1));
    RngStream noise = rng.child("source-noise-" + std::to_string(k + 1));
    Matrix x = ar1_sample(xs, static_cast<std::size_t>(cfg.n_source), corr);
    Vector eta = x * out.source_beta.col(k);
    eta.array() += 0.5;
    Vector y = draw_response(cfg.family, eta, noise);
    out.sources[static_cast<std::size_t>(k)] = make_dataset(cfg.family, std::move(x), std::move(y));
  }
  fill_correlations(out);
  out.priors = derive_priors(out.sources, cfg.source_alpha, rng.child("priors"));
  return out;
}

SimOutput simulate_internal(const InternalSimConfig& cfg, const RngStream& rng) {
  cfg.validate();
  const Eigen::Index p = cfg.p;
  // Data sets 0 (target), 2 and 3 share coefficient correlation rho_beta; data set 1 is independent.
  Matrix cov = Matrix::Identity(4, 4);
  for (int a : {0, 2, 3}) {
    for (int b : {0, 2, 3}) {
      if (a != b) cov(a, b) = cfg.rho_beta;
    }
  }
  const Matrix r = cholesky_upper(cov);
  RngStream b1_rng = rng.child("b1");
  RngStream b2_rng = rng.child("b2");
  const Matrix b1 = mvnormal_sample(b1_rng, static_cast<std::size_t>(p), r);
  const Matrix b2 = mvnormal_sample(b2_rng, static_cast<std::size_t>(p), r);
  const double threshold =
      cfg.pi >= 1.0 ? -kInf : boost::math::quantile(boost::math::normal_distribution<double>(), 1.0 - cfg.pi);
  Matrix b = (b2.array() > threshold).select(b1, Matrix::Zero(p, 4));
  b.col(2) = b.col(2).array().sign() * b.col(2).array().square();
  b.col(3) = b.col(3).array().sign() * b.col(3).array().abs().sqrt();

  SimOutput out;
  out.true_beta = b.col(0);
  out.source_beta = b.rightCols(3);
  const CorrelationSpec corr{static_cast<std::size_t>(p), cfg.rho_x};

  // Train and test rows come from one draw and are standardised together.
  RngStream target_x = rng.child("target-x");
  RngStream target_noise = rng.child("target-noise");
  const Matrix x0 = ar1_sample(target_x, static_cast<std::size_t>(cfg.n_target + cfg.n_test), corr);
  const Vector y0 = internal_response(cfg.family, cfg.w, standardize_scores(x0 * out.true_beta), target_noise);
  split_target(out, cfg.family, x0, y0, cfg.n_target);

  out.sources.resize(3);
  for (int k = 0; k < 3; ++k) {
    RngStream xs = rng.child("source-x-" + std::to_string(k + 1));
    RngStream noise = rng.child("source-noise-" + std::to_string(k + 1));
    Matrix x = ar1_sample(xs, static_cast<std::size_t>(cfg.n_source), corr);
    Vector y = internal_response(cfg.family, cfg.w, standardize_scores(x * out.source_beta.col(k)), noise);
    out.sources[static_cast<std::size_t>(k)] = make_dataset(cfg.family, std::move(x), std::move(y));
  }
  fill_correlations(out);
  out.priors = derive_priors(out.sources, cfg.source_alpha, rng.child("priors"));
  return out;
}

double relative_test_loss(Family family, const Vector& y_test, const Vector& predictions, double train_mean) {
  if (y_test.size() != predictions.size()) {
    throw InvalidParameter("relative_test_loss: " + std::to_string(y_test.size()) + " targets but " +
                           std::to_string(predictions.size()) + " predictions");
  }
  const double reference = mean_deviance(family, y_test, Vector::Constant(y_test.size(), train_mean));
  if (!(reference > 0.0)) throw UndefinedMetric("reference loss is zero; relative loss undefined");
  return 100.0 * mean_deviance(family, y_test, predictions) / reference;
}

double concordance_index(const Vector& y, const Vector& score) {
  if (y.size() != score.size()) throw InvalidParameter("concordance_index: length mismatch");
  const auto n = static_cast<std::size_t>(y.size());
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return score[static_cast<Eigen::Index>(a)] < score[static_cast<Eigen::Index>(b)];
  });
  double rank_sum = 0.0;
  double positives = 0.0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && score[static_cast<Eigen::Index>(order[j])] == score[static_cast<Eigen::Index>(order[i])]) ++j;
    const double midrank = 0.5 * static_cast<double>(i + j + 1);
    for (std::size_t t = i; t < j; ++t) {
      const double label = y[static_cast<Eigen::Index>(order[t])];
      if (label != 0.0 && label != 1.0) throw DataError("concordance_index: labels must be 0 or 1");
      if (label == 1.0) {
        rank_sum += midrank;
        positives += 1.0;
      }
    }
    i = j;
  }
  const double negatives = static_cast<double>(n) - positives;
  if (positives == 0.0 || negatives == 0.0) throw UndefinedMetric("concordance index needs both classes");
  return (rank_sum - positives * (positives + 1.0) / 2.0) / (positives * negatives);
}

std::string_view to_string(SimProtocol protocol) {
  return protocol == SimProtocol::external ? "external" : "internal";
}

SimProtocol parse_protocol(std::string_view name) {
  if (name == "external") return SimProtocol::external;
  if (name == "internal") return SimProtocol::internal;
  throw InvalidParameter("unknown protocol '" + std::string(name) + "'");
}

void ScenarioConfig::validate() const {
  if (protocol == SimProtocol::external) {
    external.validate();
  } else {
    internal.validate();
  }
  require(alpha >= 0.0 && alpha <= 1.0, "alpha must be in [0, 1]");
  require(folds >= 2, "folds must be at least 2");
  require(reps >= 0, "reps must be non-negative");
  for (const std::string& m : methods) {
    require(std::find(kSimMethods.begin(), kSimMethods.end(), m) != kSimMethods.end(),
            "unknown simulation method '" + m + "'");
  }
}

std::vector<ReplicateResult> run_replicate(const ScenarioConfig& cfg, int replicate) {
  cfg.validate();
  const RngStream rep(cfg.seed, replicate_label(replicate));
  const SimOutput sim = cfg.protocol == SimProtocol::external ? simulate_external(cfg.external, rep.child("data"))
                                                               : simulate_internal(cfg.internal, rep.child("data"));
  const Dataset& train = sim.target_train;
  const Dataset& test = sim.target_test;
  const Family family = train.family;
  const FoldPlan folds =
      make_folds(train.y, family, feasible_folds(train.y, family, cfg.folds), rep.child("folds"));
  PenaltySpec base;
  base.alpha = cfg.alpha;

  auto wants = [&](std::string_view prefix) {
    return std::any_of(cfg.methods.begin(), cfg.methods.end(),
                       [&](const std::string& m) { return m.rfind(prefix, 0) == 0; });
  };
  std::optional<MetaDesign> exp_meta;
  std::optional<MetaDesign> iso_meta;
  if (wants("exp")) {
    exp_meta = build_meta_design(train, sim.priors, folds, CalibrationMethod::exponential, base,
                                 rep.child("calibration"), cfg.calibration);
  }
  if (wants("iso")) {
    iso_meta = build_meta_design(train, sim.priors, folds, CalibrationMethod::isotonic, base,
                                 rep.child("calibration"), cfg.calibration);
  }

  const double train_mean = intercept_only_mu(family, train.y);
  auto score = [&](const std::string& method, const Vector& eta) {
    ReplicateResult r;
    r.method = method;
    r.replicate = replicate;
    Vector mu = link_inverse(family, eta);
    r.relative_loss = relative_test_loss(family, test.y, mu, train_mean);
    if (family == Family::binomial) r.cindex = concordance_index(test.y, eta);
    return r;
  };

  std::vector<ReplicateResult> results;
  const RngStream meta_rng = rep.child("meta");
  for (const std::string& method : cfg.methods) {
    if (method == "baseline") {
      const CvFit cv = exp_meta ? exp_meta->base : iso_meta ? iso_meta->base : cv_fit(train, base, folds);
      results.push_back(score(method, predict_linear(cv.path, cv.idx_min, test.x)));
      continue;
    }
    const MetaDesign& meta = method.rfind("exp", 0) == 0 ? *exp_meta : *iso_meta;
    const bool standard = method.substr(4) == "sta";
    const StackedModel model = standard ? fit_standard_stack(meta, train, meta_rng, cfg.folds)
                                        : fit_simultaneous_stack(meta, train, cfg.alpha, meta_rng, cfg.folds);
    results.push_back(score(method, predict_linear(model, test.x)));
  }
  return results;
}

std::vector<ReplicateResult> run_scenario(const ScenarioConfig& cfg) {
  cfg.validate();
  std::vector<std::vector<ReplicateResult>> per_rep(static_cast<std::size_t>(cfg.reps));
  parallel_for(per_rep.size(), [&](std::size_t r) { per_rep[r] = run_replicate(cfg, static_cast<int>(r) + 1); });
  std::vector<ReplicateResult> all;
  for (auto& rows : per_rep) all.insert(all.end(), rows.begin(), rows.end());
  return all;
}

std::string format_double(double value) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, value);
  return std::string(buf, res.ptr);
}

std::string results_csv_header() {
  return "protocol,family,Ka,h,s,alpha,rho_x,rho_beta,pi,w,n_test,method,replicate,relative_loss,cindex\n";
}

std::string results_csv(const ScenarioConfig& cfg, const std::vector<ReplicateResult>& results) {
  std::ostringstream prefix;
  prefix << to_string(cfg.protocol) << ',' << to_string(cfg.family()) << ',';
  if (cfg.protocol == SimProtocol::external) {
    const ExternalSimConfig& e = cfg.external;
    prefix << e.Ka << ',' << format_double(e.h) << ',' << e.s << ',' << format_double(cfg.alpha) << ",,,,,"
           << e.n_test;
  } else {
    const InternalSimConfig& i = cfg.internal;
    prefix << ",,," << format_double(cfg.alpha) << ',' << format_double(i.rho_x) << ','
           << format_double(i.rho_beta) << ',' << format_double(i.pi) << ',' << format_double(i.w) << ','
           << i.n_test;
  }
  const std::string head = prefix.str();
  std::string out = results_csv_header();
  for (const ReplicateResult& r : results) {
    out += head + ',' + r.method + ',' + std::to_string(r.replicate) + ',' + format_double(r.relative_loss) + ',';
    if (r.cindex) out += format_double(*r.cindex);
    out += '\n';
  }
  return out;
}

}  // namespace priorstack
