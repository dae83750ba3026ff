#include "priorstack/stacking.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "priorstack/errors.hpp"

namespace priorstack {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

RngStream source_stream(const RngStream& rng, Eigen::Index k) {
  return rng.child("source-" + std::to_string(k));
}

Vector prior_column(const PriorEffects& priors, Eigen::Index k) {
  return rescale_prior(priors.z.col(k)).z;
}

FoldPlan meta_folds(const Dataset& data, const RngStream& rng, int requested) {
  const int k = feasible_folds(data.y, data.family, requested);
  return make_folds(data.y, data.family, k, rng.child("meta-folds"));
}

StackedModel model_shell(const MetaDesign& meta, const Dataset& data) {
  StackedModel model;
  model.family = data.family;
  model.method = meta.method;
  model.sources = meta.sources;
  model.fold_seed = meta.base.folds.seed;
  const CvFit& base = meta.base;
  if (base.path.lambdas.size() > 0) {
    model.diagnostics.base_lambda_min = base.path.lambdas[base.idx_min];
    model.diagnostics.base_lambda_1se = base.path.lambdas[base.idx_1se];
    model.diagnostics.base_cv_loss = base.cv_loss_mean[base.idx_min];
  }
  return model;
}

}  // namespace

std::string_view to_string(StackMode mode) {
  return mode == StackMode::standard ? "standard" : "simultaneous";
}

StackMode parse_stack_mode(std::string_view name) {
  if (name == "standard" || name == "sta") return StackMode::standard;
  if (name == "simultaneous" || name == "sim") return StackMode::simultaneous;
  throw InvalidParameter("unknown stacking mode '" + std::string(name) + "'");
}

int feasible_folds(const Vector& y, Family family, int requested) {
  Eigen::Index k = std::min<Eigen::Index>(requested, y.size());
  if (family == Family::binomial) {
    const auto pos = static_cast<Eigen::Index>((y.array() == 1.0).count());
    k = std::min({k, pos, y.size() - pos});
  }
  if (k < 2) throw DegenerateFolds("too few samples (or too few of one class) for cross-validation");
  return static_cast<int>(k);
}

Matrix MetaDesign::standard_features() const {
  Matrix out(h0cv.rows(), h0cv.cols() + 2);
  out.leftCols(h0cv.cols()) = h0cv;
  out.col(h0cv.cols()) = h1cv_min;
  out.col(h0cv.cols() + 1) = h1cv_1se;
  return out;
}

MetaDesign build_meta_design(const Dataset& data, const PriorEffects& priors, const FoldPlan& folds,
                             CalibrationMethod method, const PenaltySpec& base_spec, const RngStream& rng,
                             const CalibrationOptions& options) {
  data.validate();
  folds.validate(data.n());
  if (priors.z.rows() != data.p()) {
    throw InvalidParameter("prior matrix has " + std::to_string(priors.z.rows()) + " rows for " +
                           std::to_string(data.p()) + " features");
  }
  const Eigen::Index m = priors.sources();
  MetaDesign meta;
  meta.method = method;
  meta.sources.resize(static_cast<std::size_t>(m));
  parallel_for(static_cast<std::size_t>(m), [&](std::size_t s) {
    const auto k = static_cast<Eigen::Index>(s);
    meta.sources[s] = calibrate(method, data, prior_column(priors, k), source_stream(rng, k).child("full"), options);
  });

  // Held-out predictions of every non-zero source; the filter and the meta
  // design both read them.
  const auto nfolds = static_cast<std::size_t>(folds.k);
  Matrix heldout = Matrix::Zero(data.n(), m);
  Matrix alpha = Matrix::Zero(data.n(), m);
  Vector mu_null(data.n());
  for (int fold = 0; fold < folds.k; ++fold) {
    const double mean = intercept_only_mu(data.family, data.subset(folds.train_rows(fold)).y);
    for (Eigen::Index i : folds.test_rows(fold)) mu_null[i] = mean;
  }
  parallel_for(static_cast<std::size_t>(m) * nfolds, [&](std::size_t task) {
    const auto k = static_cast<Eigen::Index>(task / nfolds);
    const int fold = static_cast<int>(task % nfolds);
    if (meta.sources[static_cast<std::size_t>(k)].all_zero) return;
    const Dataset train = data.subset(folds.train_rows(fold));
    const CalibratedSource cal = calibrate(method, train, prior_column(priors, k),
                                           source_stream(rng, k).child("fold-" + std::to_string(fold)), options);
    for (Eigen::Index i : folds.test_rows(fold)) {
      heldout(i, k) = data.x.row(i).dot(cal.gamma);
      alpha(i, k) = cal.alpha_k;
    }
  });

  for (Eigen::Index k = 0; k < m; ++k) {
    CalibratedSource& src = meta.sources[static_cast<std::size_t>(k)];
    if (options.filter_residuals == FilterResiduals::in_sample) {
      src = filter_source(data, src, options.significance);
    } else {
      const Vector eta = heldout.col(k) + alpha.col(k);
      src = filter_source_heldout(data.y, data.family, src, eta, mu_null, options.significance);
    }
    if (!src.retained) continue;
    meta.retained.push_back(k);
    meta.labels.push_back(k < static_cast<Eigen::Index>(priors.names.size())
                              ? priors.names[static_cast<std::size_t>(k)]
                              : "source" + std::to_string(k + 1));
  }
  meta.h0cv.resize(data.n(), static_cast<Eigen::Index>(meta.retained.size()));
  for (std::size_t c = 0; c < meta.retained.size(); ++c) {
    meta.h0cv.col(static_cast<Eigen::Index>(c)) = heldout.col(meta.retained[c]);
  }

  meta.base = cv_fit(data, base_spec, folds);
  meta.h1cv_min = meta.base.cv_eta.col(meta.base.idx_min);
  meta.h1cv_1se = meta.base.cv_eta.col(meta.base.idx_1se);
  return meta;
}

StackedModel fit_standard_stack(const MetaDesign& meta, const Dataset& data, const RngStream& rng,
                                int meta_folds_requested) {
  const Eigen::Index kept = meta.h0cv.cols();
  const Eigen::Index m = static_cast<Eigen::Index>(meta.sources.size());
  Dataset md;
  md.family = data.family;
  md.x = meta.standard_features();
  md.y = data.y;
  PenaltySpec spec;
  spec.alpha = 1.0;
  spec.lower = Vector::Zero(kept + 2);
  const CvFit cv = cv_fit(md, spec, meta_folds(data, rng, meta_folds_requested));
  const Eigen::Index l = cv.idx_min;
  const Vector w = cv.path.coefs.col(l);

  StackedModel model = model_shell(meta, data);
  model.mode = StackMode::standard;
  model.omega0 = cv.path.intercepts[l];
  model.meta_lambda = cv.path.lambdas[l];
  model.diagnostics.meta_cv_loss = cv.cv_loss_mean[l];
  model.omega = Vector::Zero(m + 2);
  model.beta_star = Vector::Zero(data.p());
  for (Eigen::Index c = 0; c < kept; ++c) {
    const Eigen::Index k = meta.retained[static_cast<std::size_t>(c)];
    model.omega[k] = w[c];
    model.beta_star += w[c] * meta.sources[static_cast<std::size_t>(k)].gamma;
  }
  const PathFit& base = meta.base.path;
  const double w_min = w[kept];
  const double w_1se = w[kept + 1];
  model.omega[m] = w_min;
  model.omega[m + 1] = w_1se;
  model.beta_direct = w_min * base.coefs.col(meta.base.idx_min) + w_1se * base.coefs.col(meta.base.idx_1se);
  model.beta_star += model.beta_direct;
  model.intercept_star = model.omega0 + w_min * base.intercepts[meta.base.idx_min] +
                         w_1se * base.intercepts[meta.base.idx_1se];
  return model;
}

StackedModel fit_simultaneous_stack(const MetaDesign& meta, const Dataset& data, double base_alpha,
                                    const RngStream& rng, int meta_folds_requested) {
  const Eigen::Index kept = meta.h0cv.cols();
  if (kept > kMaxSimultaneousSources) {
    throw InvalidParameter("simultaneous stacking supports at most " + std::to_string(kMaxSimultaneousSources) +
                           " retained sources (got " + std::to_string(kept) + "); use standard stacking");
  }
  const Eigen::Index p = data.p();
  Dataset joint;
  joint.family = data.family;
  joint.y = data.y;
  joint.x.resize(data.n(), kept + p);
  joint.x.leftCols(kept) = meta.h0cv;
  joint.x.rightCols(p) = data.x;
  PenaltySpec spec;
  spec.alpha = base_alpha;
  spec.penalty_factors = Vector::Ones(kept + p);
  spec.penalty_factors.head(kept).setZero();
  spec.lower = Vector::Constant(kept + p, -kInf);
  spec.lower.head(kept).setZero();
  const CvFit cv = cv_fit(joint, spec, meta_folds(data, rng, meta_folds_requested));
  const Eigen::Index l = cv.idx_min;
  const Vector w = cv.path.coefs.col(l);

  StackedModel model = model_shell(meta, data);
  model.mode = StackMode::simultaneous;
  model.omega0 = cv.path.intercepts[l];
  model.meta_lambda = cv.path.lambdas[l];
  model.diagnostics.meta_cv_loss = cv.cv_loss_mean[l];
  model.omega = Vector::Zero(static_cast<Eigen::Index>(meta.sources.size()));
  model.beta_direct = w.tail(p);
  model.beta_star = model.beta_direct;
  for (Eigen::Index c = 0; c < kept; ++c) {
    const Eigen::Index k = meta.retained[static_cast<std::size_t>(c)];
    model.omega[k] = w[c];
    model.beta_star += w[c] * meta.sources[static_cast<std::size_t>(k)].gamma;
  }
  model.intercept_star = model.omega0;
  return model;
}

Vector predict_linear(const StackedModel& model, const Matrix& xnew) {
  if (xnew.cols() != model.p()) {
    throw InvalidParameter("model expects " + std::to_string(model.p()) + " features, got " +
                           std::to_string(xnew.cols()));
  }
  Vector eta = xnew * model.beta_star;
  eta.array() += model.intercept_star;
  return eta;
}

Vector predict(const StackedModel& model, const Matrix& xnew) {
  Vector mu = link_inverse(model.family, predict_linear(model, xnew));
  // Keep probabilities strictly inside (0, 1) even when exp() saturates.
  if (model.family == Family::binomial) mu = mu.cwiseMax(kProbClamp).cwiseMin(1.0 - kProbClamp);
  return mu;
}

StackedModel fit_stacked(const Dataset& data, const PriorEffects& priors, const StackOptions& options) {
  data.validate();
  FoldPlan folds = make_folds(data.y, data.family, options.folds, RngStream(options.seed, "folds"));
  PenaltySpec base;
  base.alpha = options.alpha;
  const MetaDesign meta = build_meta_design(data, priors, folds, options.method, base,
                                            RngStream(options.seed, "calibration"), options.calibration);
  const RngStream meta_rng(options.seed, "meta");
  StackedModel model = options.mode == StackMode::standard
                           ? fit_standard_stack(meta, data, meta_rng, options.folds)
                           : fit_simultaneous_stack(meta, data, options.alpha, meta_rng, options.folds);
  model.source_names = priors.names;
  model.source_names.resize(static_cast<std::size_t>(priors.sources()));
  for (std::size_t k = 0; k < model.source_names.size(); ++k) {
    if (model.source_names[k].empty()) model.source_names[k] = "source" + std::to_string(k + 1);
  }
  model.fold_seed = options.seed;
  return model;
}

}  // namespace priorstack
