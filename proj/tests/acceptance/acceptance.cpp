// Acceptance suite: one PASS/FAIL line per criterion. Exit status is 0 only
// when every selected criterion passes.

#include <CLI11.hpp>

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <limits>
#include <map>
#include <numeric>
#include <sstream>

#include "cli.hpp"
#include "oracles/enet_oracle.hpp"
#include "oracles/isotonic_oracle.hpp"
#include "oracles/wilcoxon_oracle.hpp"
#include "priorstack/calibration.hpp"
#include "priorstack/errors.hpp"
#include "priorstack/model_io.hpp"
#include "priorstack/simulation.hpp"
#include "priorstack/solver.hpp"
#include "priorstack/stacking.hpp"

using namespace priorstack;
namespace fs = std::filesystem;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

struct Outcome {
  bool pass = false;
  std::string detail;
};

struct Criterion {
  int id;
  std::string name;
  double time_limit;  ///< seconds; infinity when unstated
  std::function<Outcome()> run;
};

std::string fmt(const char* format, double a) {
  char buf[64];
  std::snprintf(buf, sizeof buf, format, a);
  return buf;
}

Matrix gaussian_matrix(RngStream& rng, Eigen::Index n, Eigen::Index p) {
  Matrix x(n, p);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < p; ++j) x(i, j) = rng.normal();
  }
  return x;
}

double pop_sd(const Vector& v) {
  return std::sqrt((v.array() - v.mean()).square().sum() / static_cast<double>(v.size()));
}

// Standard Gaussian truncated to its 1%..99% quantile range.
Vector trimmed_gaussian(RngStream& rng, Eigen::Index p) {
  constexpr double q99 = 2.3263478740408408;
  Vector z(p);
  for (Eigen::Index j = 0; j < p; ++j) {
    double v = 0.0;
    do {
      v = rng.normal();
    } while (std::abs(v) > q99);
    z[j] = v;
  }
  return z;
}

// ---------------------------------------------------------------------------

Outcome solver_oracle() {
  RngStream rng(2024, "acceptance-solver");
  double worst_coef = 0.0;
  double worst_kkt = 0.0;
  for (int inst = 0; inst < 50; ++inst) {
    const Eigen::Index n = 20;
    const Eigen::Index p = 5;
    Dataset d;
    d.x.resize(n, p);
    for (Eigen::Index i = 0; i < n; ++i) {
      for (Eigen::Index j = 0; j < p; ++j) d.x(i, j) = rng.normal() * (0.5 + static_cast<double>(j)) + rng.uniform();
    }
    Vector beta(p);
    for (Eigen::Index j = 0; j < p; ++j) beta[j] = rng.normal();
    d.y = d.x * beta;
    for (Eigen::Index i = 0; i < n; ++i) d.y[i] += 1.0 + rng.normal();

    PenaltySpec spec;
    spec.alpha = std::array<double, 4>{1.0, 0.7, 0.3, 0.05}[static_cast<std::size_t>(inst % 4)];
    spec.penalty_factors.resize(p);
    spec.lower.resize(p);
    spec.upper.resize(p);
    for (Eigen::Index j = 0; j < p; ++j) {
      spec.penalty_factors[j] = std::array<double, 4>{0.0, 0.5, 1.0, 2.0}[rng.below(4)];
      spec.lower[j] = rng.bernoulli(0.5) ? -kInf : -0.5 * rng.uniform();
      spec.upper[j] = rng.bernoulli(0.5) ? kInf : 0.5 * rng.uniform();
      if (rng.bernoulli(0.2)) spec.lower[j] = 0.0;
    }
    const double lambda = 0.02 + 0.4 * rng.uniform();
    const std::vector<double> lambdas{lambda};
    const PathFit fit = fit_path(d, spec, lambdas);

    const auto s = oracle::standardise(d.x);
    const oracle::Problem pr{s.x, d.y, lambda, spec.alpha, spec.penalty_factors,
                             spec.lower.cwiseProduct(s.sds), spec.upper.cwiseProduct(s.sds)};
    const oracle::Solution sol = oracle::solve(pr);
    const Vector got = fit.coefs.col(0).cwiseProduct(s.sds);
    const double intercept = sol.intercept - sol.beta.cwiseQuotient(s.sds).dot(s.means);
    worst_coef = std::max({worst_coef, (got - sol.beta).cwiseAbs().maxCoeff(), std::abs(fit.intercepts[0] - intercept)});
    worst_kkt = std::max(worst_kkt, kkt_residual(d, fit, 0));
  }
  return {worst_coef <= 1e-6 && worst_kkt <= 1e-6,
          "50 instances; max coefficient gap " + fmt("%.2e", worst_coef) + ", max KKT residual " + fmt("%.2e", worst_kkt)};
}

Outcome isotonic_oracle() {
  RngStream rng(2025, "acceptance-isotonic");
  double worst_gamma = 0.0;
  double worst_identity = 0.0;
  for (int inst = 0; inst < 50; ++inst) {
    const Eigen::Index n = 50;
    const Eigen::Index p = 2 + inst % 5;
    const Matrix x = gaussian_matrix(rng, n, p);
    Vector zraw = trimmed_gaussian(rng, p);
    if (inst % 7 == 0) zraw = -zraw.cwiseAbs();
    if (inst % 7 == 1) zraw = zraw.cwiseAbs();
    const Vector z = rescale_prior(zraw).z;
    Dataset d;
    d.x = x;
    const Vector truth = inst % 2 == 0 ? Vector(z) : Vector(z.array().sign() * z.array().square());
    d.y = x * truth;
    for (Eigen::Index i = 0; i < n; ++i) d.y[i] += (0.5 + rng.uniform()) * rng.normal();
    const CalibratedSource cal = calibrate_isotonic(d, z, rng.child("cv-" + std::to_string(inst)));

    std::vector<Eigen::Index> order(static_cast<std::size_t>(p));
    std::iota(order.begin(), order.end(), Eigen::Index{0});
    std::stable_sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) { return z[a] < z[b]; });
    oracle::IsotonicProblem pr;
    pr.x.resize(n, p);
    for (Eigen::Index j = 0; j < p; ++j) pr.x.col(j) = x.col(order[static_cast<std::size_t>(j)]);
    pr.y = d.y;
    pr.q = static_cast<Eigen::Index>((z.array() < 0).count());
    pr.lambda = cal.lambda.value_or(0.0);
    pr.alpha = 0.95;
    pr.scale.resize(p);
    for (Eigen::Index j = 0; j < p; ++j) {
      Vector w = Vector::Zero(n);
      if (j < pr.q) {
        for (Eigen::Index l = 0; l <= j; ++l) w += pr.x.col(l);
      } else {
        for (Eigen::Index l = j; l < p; ++l) w += pr.x.col(l);
      }
      pr.scale[j] = pop_sd(w);
    }
    const auto sol = oracle::solve_isotonic(pr);
    for (Eigen::Index j = 0; j < p; ++j) {
      worst_gamma = std::max(worst_gamma, std::abs(cal.gamma[order[static_cast<std::size_t>(j)]] - sol.gamma[j]));
    }
    worst_gamma = std::max(worst_gamma, std::abs(cal.alpha_k - sol.intercept));
    const CumsumDesign design = build_cumsum_design(x, z);
    worst_identity = std::max(worst_identity, (design.w * cal.delta - x * cal.gamma).cwiseAbs().maxCoeff());
  }
  return {worst_gamma <= 1e-5 && worst_identity <= 1e-10,
          "50 instances; max gap to QP oracle " + fmt("%.2e", worst_gamma) + ", max |W delta - X gamma| " +
              fmt("%.2e", worst_identity)};
}

Vector fig1_beta(int scenario, const Vector& z) {
  Vector b(z.size());
  for (Eigen::Index j = 0; j < z.size(); ++j) {
    const double v = z[j];
    const double sgn = v > 0 ? 1.0 : (v < 0 ? -1.0 : 0.0);
    switch (scenario) {
      case 1: b[j] = v; break;
      case 2: b[j] = sgn * std::sqrt(std::abs(v)); break;
      case 3: b[j] = sgn * v * v; break;
      case 4: b[j] = v > 0 ? v : 0.0; break;
      case 5: b[j] = v > 1 ? 1.0 : 0.0; break;
      default: b[j] = v <= 0 ? -std::sqrt(std::abs(v)) : v * v; break;
    }
  }
  return b;
}

Outcome fig1_scenarios() {
  std::ostringstream detail;
  bool pass = true;
  for (int scenario = 1; scenario <= 6; ++scenario) {
    int wins = 0;
    for (int rep = 0; rep < 10; ++rep) {
      RngStream rng(static_cast<std::uint64_t>(rep), "fig1-" + std::to_string(scenario));
      const Matrix x = gaussian_matrix(rng, 200, 500);
      const Vector z = trimmed_gaussian(rng, 500);
      const Vector beta = fig1_beta(scenario, z);
      const Vector eta = x * beta;
      const double sd = pop_sd(eta);
      Dataset d;
      d.x = x;
      d.y = eta;
      for (Eigen::Index i = 0; i < 200; ++i) d.y[i] += sd * rng.normal();
      const Vector zs = rescale_prior(z).z;
      const Vector ge = calibrate_exponential(d, zs).gamma;
      const Vector gi = calibrate_isotonic(d, zs, rng.child("iso")).gamma;
      const double mse_exp = (ge - beta).squaredNorm() / 500.0;
      const double mse_iso = (gi - beta).squaredNorm() / 500.0;
      wins += scenario <= 3 ? (mse_exp <= 1.2 * mse_iso) : (mse_iso < mse_exp);
    }
    pass = pass && wins >= 8;
    detail << (scenario > 1 ? ", " : "") << "s" << scenario << " " << wins << "/10";
  }
  return {pass, "replicates meeting the per-scenario rule: " + detail.str()};
}

std::map<std::string, std::vector<double>> losses_by_method(const std::vector<ReplicateResult>& rows) {
  std::map<std::string, std::vector<double>> out;
  for (const ReplicateResult& r : rows) out[r.method].push_back(r.relative_loss);
  return out;
}

double mean(const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size()); }

Outcome favourable_transfer() {
  ScenarioConfig cfg;
  cfg.protocol = SimProtocol::external;
  cfg.external.family = Family::gaussian;
  cfg.external.s = 50;
  cfg.external.h = 5;
  cfg.external.Ka = 5;
  cfg.external.n_test = 2000;
  cfg.external.source_alpha = 0.0;
  cfg.alpha = 0.0;
  cfg.reps = 10;
  cfg.seed = 4;
  cfg.methods = {"baseline", "iso.sta"};
  const auto loss = losses_by_method(run_scenario(cfg));
  const double base = mean(loss.at("baseline"));
  const double iso = mean(loss.at("iso.sta"));
  return {iso < 0.35 * base, "mean relative loss baseline " + fmt("%.1f", base) + ", iso.sta " + fmt("%.1f", iso) +
                                 " (ratio " + fmt("%.3f", iso / base) + ", limit 0.35)"};
}

Outcome negative_transfer() {
  ScenarioConfig cfg;
  cfg.protocol = SimProtocol::external;
  cfg.external.family = Family::gaussian;
  cfg.external.s = 15;
  cfg.external.h = 250;
  cfg.external.Ka = 1;
  cfg.external.n_test = 2000;
  cfg.external.source_alpha = 0.95;
  cfg.alpha = 1.0;
  cfg.reps = 10;
  cfg.seed = 5;
  cfg.methods = {"baseline", "exp.sta", "iso.sta"};
  const auto loss = losses_by_method(run_scenario(cfg));
  const double base = mean(loss.at("baseline"));
  const double ex = mean(loss.at("exp.sta"));
  const double iso = mean(loss.at("iso.sta"));
  return {ex <= 1.1 * base && iso <= 1.1 * base, "mean relative loss baseline " + fmt("%.2f", base) + ", exp.sta " +
                                                     fmt("%.2f", ex) + ", iso.sta " + fmt("%.2f", iso) +
                                                     " (limit 1.1 x baseline)"};
}

Outcome internal_sanity() {
  ScenarioConfig cfg;
  cfg.protocol = SimProtocol::internal;
  cfg.internal.family = Family::gaussian;
  cfg.internal.rho_x = 0.95;
  cfg.internal.rho_beta = 0.99;
  cfg.internal.pi = 0.2;
  cfg.internal.n_test = 2000;
  cfg.internal.source_alpha = 0.0;
  cfg.alpha = 0.0;
  cfg.reps = 10;
  cfg.seed = 6;
  const auto rows = run_scenario(cfg);
  std::map<int, double> baseline;
  for (const auto& r : rows) {
    if (r.method == "baseline") baseline[r.replicate] = r.relative_loss;
  }
  std::map<std::string, int> wins;
  for (const auto& r : rows) {
    if (r.method != "baseline" && r.relative_loss < baseline.at(r.replicate)) ++wins[r.method];
  }
  int best = 0;
  std::ostringstream detail;
  detail << "replicates beating baseline:";
  for (const std::string& m : {"exp.sta", "exp.sim", "iso.sta", "iso.sim"}) {
    best = std::max(best, wins[m]);
    detail << " " << m << " " << wins[m] << "/10";
  }
  const auto loss = losses_by_method(rows);
  detail << "; mean baseline " << fmt("%.1f", mean(loss.at("baseline"))) << ", iso.sta "
         << fmt("%.1f", mean(loss.at("iso.sta")));
  return {best >= 7, detail.str()};
}

struct ToyProblem {
  Dataset data;
  PriorEffects priors;
};

ToyProblem toy_problem(std::uint64_t seed, Eigen::Index n, Eigen::Index p, Family family = Family::gaussian) {
  RngStream rng(seed, "acceptance-toy");
  ToyProblem t;
  t.data.family = family;
  t.data.x = gaussian_matrix(rng, n, p);
  Vector beta(p);
  for (Eigen::Index j = 0; j < p; ++j) beta[j] = rng.bernoulli(0.4) ? (rng.bernoulli(0.5) ? -1.0 : 1.0) * (0.5 + rng.uniform()) : 0.0;
  t.data.y = t.data.x * beta;
  for (Eigen::Index i = 0; i < n; ++i) {
    t.data.y[i] += 0.5 * rng.normal();
    if (family == Family::binomial) t.data.y[i] = t.data.y[i] > 0.0 ? 1.0 : 0.0;
  }
  t.priors.z.resize(p, 2);
  for (Eigen::Index j = 0; j < p; ++j) {
    t.priors.z(j, 0) = beta[j] + 0.2 * rng.normal();
    t.priors.z(j, 1) = std::abs(beta[j]) + 0.5 * rng.normal();
  }
  t.priors.names = {"a", "b"};
  return t;
}

Outcome scaling_invariance() {
  double worst = 0.0;
  int fits = 0;
  for (std::uint64_t seed : {71, 72}) {
    const Family family = seed == 71 ? Family::gaussian : Family::binomial;
    const ToyProblem t = toy_problem(seed, 80, 40, family);
    RngStream rng(seed, "fresh-rows");
    const Matrix fresh = gaussian_matrix(rng, 25, 40);
    for (CalibrationMethod method : {CalibrationMethod::exponential, CalibrationMethod::isotonic}) {
      for (StackMode mode : {StackMode::standard, StackMode::simultaneous}) {
        StackOptions opts;
        opts.method = method;
        opts.mode = mode;
        opts.seed = seed;
        const StackedModel base = fit_stacked(t.data, t.priors, opts);
        const Vector pred = predict(base, fresh);
        for (Eigen::Index k = 0; k < 2; ++k) {
          for (double c : {0.1, 3.0, 1000.0}) {
            PriorEffects scaled = t.priors;
            scaled.z.col(k) *= c;
            const StackedModel m = fit_stacked(t.data, scaled, opts);
            worst = std::max({worst, (m.beta_star - base.beta_star).cwiseAbs().maxCoeff(),
                              std::abs(m.intercept_star - base.intercept_star),
                              (predict(m, fresh) - pred).cwiseAbs().maxCoeff()});
            ++fits;
          }
        }
      }
    }
  }
  return {worst <= 1e-8, std::to_string(fits) + " rescaled fits; max change in beta*, intercept or prediction " +
                             fmt("%.2e", worst)};
}

Outcome no_leakage() {
  double worst = 0.0;
  long entries = 0;
  bool perturbation_ok = true;
  for (Family family : {Family::gaussian, Family::binomial}) {
    ToyProblem t = toy_problem(81, 30, 12, family);
    const FoldPlan folds = make_folds(t.data.y, family, 5, RngStream(81, "folds"));
    CalibrationOptions opts;
    opts.significance = 1.0;  // keep both sources so every column is exercised
    const RngStream rng(81, "calibration");
    for (CalibrationMethod method : {CalibrationMethod::exponential, CalibrationMethod::isotonic}) {
      const MetaDesign meta = build_meta_design(t.data, t.priors, folds, method, PenaltySpec{}, rng, opts);
      const std::vector<double> lambdas(meta.base.path.lambdas.data(),
                                        meta.base.path.lambdas.data() + meta.base.path.lambdas.size());
      for (int f = 0; f < folds.k; ++f) {
        const Dataset train = t.data.subset(folds.train_rows(f));
        const auto test = folds.test_rows(f);
        for (std::size_t c = 0; c < meta.retained.size(); ++c) {
          const Eigen::Index k = meta.retained[c];
          const Vector z = rescale_prior(t.priors.z.col(k)).z;
          const CalibratedSource cal = calibrate(method, train, z,
                                                 rng.child("source-" + std::to_string(k)).child("fold-" + std::to_string(f)), opts);
          for (Eigen::Index i : test) {
            worst = std::max(worst, std::abs(meta.h0cv(i, static_cast<Eigen::Index>(c)) - t.data.x.row(i).dot(cal.gamma)));
            ++entries;
          }
        }
        const PathFit refit = fit_path(train, PenaltySpec{}, lambdas);
        for (Eigen::Index i : test) {
          const double e_min = refit.intercepts[meta.base.idx_min] + t.data.x.row(i).dot(refit.coefs.col(meta.base.idx_min));
          const double e_1se = refit.intercepts[meta.base.idx_1se] + t.data.x.row(i).dot(refit.coefs.col(meta.base.idx_1se));
          worst = std::max({worst, std::abs(meta.h1cv_min[i] - e_min), std::abs(meta.h1cv_1se[i] - e_1se)});
          entries += 2;
        }
      }
      // Changing the held-out targets of fold 0 must leave its meta rows untouched.
      ToyProblem changed = t;
      for (Eigen::Index i : folds.test_rows(0)) {
        changed.data.y[i] = family == Family::gaussian ? changed.data.y[i] + 5.0 : 1.0 - changed.data.y[i];
      }
      const MetaDesign other = build_meta_design(changed.data, t.priors, folds, method, PenaltySpec{}, rng, opts);
      if (other.base.idx_min == meta.base.idx_min && other.base.idx_1se == meta.base.idx_1se) {
        for (Eigen::Index i : folds.test_rows(0)) {
          perturbation_ok = perturbation_ok && other.h0cv.row(i) == meta.h0cv.row(i);
        }
      }
    }
  }
  return {worst <= 1e-8 && perturbation_ok,
          std::to_string(entries) + " meta-design entries recomputed; max gap " + fmt("%.2e", worst) +
              (perturbation_ok ? "; held-out perturbation has no effect" : "; held-out perturbation leaked")};
}

Outcome wilcoxon_exact() {
  RngStream rng(2026, "acceptance-wilcoxon");
  double worst_exact = 0.0;
  for (int rep = 0; rep < 200; ++rep) {
    const auto n = static_cast<Eigen::Index>(1 + rep % 12);
    Vector d(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      d[i] = rep % 2 == 0 ? rng.normal() - 0.3 : static_cast<double>(rng.below(9)) - 4.0;
    }
    const double exact = wilcoxon_signed_rank_one_sided(d, WilcoxonMethod::exact);
    worst_exact = std::max(worst_exact, std::abs(exact - oracle::enumerate_signed_rank_pvalue(d)));
  }
  double worst_approx = 0.0;
  for (int rep = 0; rep < 200; ++rep) {
    Vector d(12);
    for (Eigen::Index i = 0; i < 12; ++i) d[i] = rng.normal() + (rng.uniform() - 0.5);
    worst_approx = std::max(worst_approx, std::abs(wilcoxon_signed_rank_one_sided(d, WilcoxonMethod::normal) -
                                                   wilcoxon_signed_rank_one_sided(d, WilcoxonMethod::exact)));
  }
  return {worst_exact <= 1e-12 && worst_approx <= 0.01,
          "200 vectors n <= 12: max |exact - enumeration| " + fmt("%.1e", worst_exact) +
              "; n = 12: max |normal - exact| " + fmt("%.4f", worst_approx)};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

void write_csv(const fs::path& path, const std::vector<std::string>& header, const Matrix& values,
               const std::vector<std::string>& labels = {}) {
  std::ofstream out(path, std::ios::binary);
  if (!labels.empty()) out << "feature,";
  for (std::size_t j = 0; j < header.size(); ++j) out << (j ? "," : "") << header[j];
  out << "\n";
  for (Eigen::Index i = 0; i < values.rows(); ++i) {
    if (!labels.empty()) out << labels[static_cast<std::size_t>(i)] << ",";
    for (Eigen::Index j = 0; j < values.cols(); ++j) out << (j ? "," : "") << format_double(values(i, j));
    out << "\n";
  }
}

Outcome cli_determinism() {
  const fs::path dir = fs::temp_directory_path() / "priorstack-acceptance-cli";
  fs::remove_all(dir);
  fs::create_directories(dir);
  const ToyProblem t = toy_problem(91, 60, 25, Family::binomial);
  std::vector<std::string> names;
  for (int j = 0; j < 25; ++j) names.push_back("g" + std::to_string(j));
  write_csv(dir / "x.csv", names, t.data.x);
  write_csv(dir / "y.csv", {"y"}, t.data.y);
  write_csv(dir / "z.csv", t.priors.names, t.priors.z, names);
  const std::string d = dir.string() + "/";

  // Each command writes to the named files (or stdout); all are compared byte for byte.
  struct Command {
    std::vector<std::string> args;
    std::vector<std::string> files;
  };
  const std::vector<Command> commands = {
      {{"fit", "--features", d + "x.csv", "--target", d + "y.csv", "--priors", d + "z.csv", "--family", "binomial",
        "--calibration", "iso", "--stacking", "sta", "--model", d + "m1.json", "--out", d + "r1.json", "--seed", "5"},
       {"m1.json", "r1.json"}},
      {{"fit", "--features", d + "x.csv", "--target", d + "y.csv", "--priors", d + "z.csv", "--family", "binomial",
        "--calibration", "exp", "--stacking", "sim", "--model", d + "m2.json", "--seed", "5"},
       {"m2.json"}},
      {{"predict", "--features", d + "x.csv", "--model", d + "m1.json", "--out", d + "p.csv"}, {"p.csv"}},
      {{"evaluate", "--predictions", d + "p.csv", "--truth", d + "y.csv", "--family", "binomial"}, {}},
      {{"simulate", "--protocol", "external", "--sparse", "--Ka", "3", "--reps", "2", "--n-test", "200", "--methods",
        "baseline,exp.sta,iso.sim", "--seed", "7", "--out", d + "sim.csv"},
       {"sim.csv"}},
  };
  int identical = 0;
  std::string failure;
  for (const Command& cmd : commands) {
    std::vector<std::string> reference;
    bool same = true;
    for (const char* threads : {"1", "2", "4"}) {
      std::vector<std::string> args = {"priorstack-cli", "--threads", threads};
      args.insert(args.end(), cmd.args.begin(), cmd.args.end());
      std::vector<const char*> argv;
      for (const auto& a : args) argv.push_back(a.c_str());
      std::ostringstream out;
      std::ostringstream err;
      const int code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
      std::vector<std::string> outputs = {std::to_string(code), out.str()};
      for (const std::string& f : cmd.files) outputs.push_back(slurp(dir / f));
      if (code != 0) failure = cmd.args[0] + " exited with " + std::to_string(code) + ": " + err.str();
      if (reference.empty()) {
        reference = outputs;
      } else if (outputs != reference) {
        same = false;
      }
    }
    if (same && failure.empty()) ++identical;
  }
  fs::remove_all(dir);
  const bool pass = identical == static_cast<int>(commands.size());
  return {pass, std::to_string(identical) + "/" + std::to_string(commands.size()) +
                    " commands byte-identical across --threads 1, 2, 4" + (failure.empty() ? "" : "; " + failure)};
}

Outcome filter_null() {
  int retained_exp = 0;
  int retained_iso = 0;
  for (int rep = 0; rep < 100; ++rep) {
    RngStream rng(static_cast<std::uint64_t>(rep), "acceptance-null");
    Dataset d;
    d.x = gaussian_matrix(rng, 100, 200);
    d.y.resize(100);
    for (Eigen::Index i = 0; i < 100; ++i) d.y[i] = rng.normal();
    PriorEffects priors;
    priors.z.resize(200, 1);
    for (Eigen::Index j = 0; j < 200; ++j) priors.z(j, 0) = rng.normal();
    const FoldPlan folds = make_folds(d.y, d.family, 10, rng.child("folds"));
    for (CalibrationMethod method : {CalibrationMethod::exponential, CalibrationMethod::isotonic}) {
      const MetaDesign meta = build_meta_design(d, priors, folds, method, PenaltySpec{}, rng.child("calibration"));
      (method == CalibrationMethod::exponential ? retained_exp : retained_iso) += meta.sources[0].retained;
    }
  }
  return {retained_exp <= 10 && retained_iso <= 10, "noise sources retained: exponential " +
                                                        std::to_string(retained_exp) + "/100, isotonic " +
                                                        std::to_string(retained_iso) + "/100 (limit 10)"};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria"};
  std::vector<int> only;
  unsigned threads = 0;
  app.add_option("--only", only, "criterion numbers to run (default: all)")->delimiter(',');
  app.add_option("--threads", threads, "worker thread cap");
  CLI11_PARSE(app, argc, argv);
  set_max_threads(threads);

  const std::vector<Criterion> criteria = {
      {1, "solver matches brute-force oracle", 10.0, solver_oracle},
      {2, "isotonic reduction matches constrained QP", 30.0, isotonic_oracle},
      {3, "calibration scenarios (n=200, p=500)", 120.0, fig1_scenarios},
      {4, "external favourable transfer (dense, h=5, Ka=5)", 900.0, favourable_transfer},
      {5, "external negative-transfer stress (sparse, h=250, Ka=1)", 900.0, negative_transfer},
      {6, "internal simulation sanity (rho_x=0.95, rho_beta=0.99)", kInf, internal_sanity},
      {7, "positive-scaling invariance", kInf, scaling_invariance},
      {8, "no leakage into the meta design (n=30)", kInf, no_leakage},
      {9, "signed-rank p-values", kInf, wilcoxon_exact},
      {10, "CLI determinism across thread counts", kInf, cli_determinism},
      {11, "filter null behaviour", kInf, filter_null},
  };

  int failed = 0;
  for (const Criterion& c : criteria) {
    if (!only.empty() && std::find(only.begin(), only.end(), c.id) == only.end()) continue;
    const auto start = std::chrono::steady_clock::now();
    Outcome result;
    try {
      result = c.run();
    } catch (const std::exception& e) {
      result = {false, std::string("threw: ") + e.what()};
    }
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (seconds > c.time_limit) {
      result.pass = false;
      result.detail += "; exceeded time limit of " + fmt("%.0f", c.time_limit) + " s";
    }
    failed += result.pass ? 0 : 1;
    std::cout << (result.pass ? "PASS" : "FAIL") << "  criterion " << c.id << ": " << c.name << " | " << result.detail
              << " | " << fmt("%.1f", seconds) << " s" << std::endl;
  }
  return failed == 0 ? 0 : 1;
}
