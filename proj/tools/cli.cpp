#include "cli.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>

#include "priorstack/errors.hpp"
#include "priorstack/model_io.hpp"
#include "priorstack/simulation.hpp"
#include "priorstack/stacking.hpp"

namespace priorstack::cli {

namespace {

using nlohmann::json;

constexpr int kReportSchemaVersion = 1;

std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return std::string(s.substr(first, last - first + 1));
}

std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto comma = line.find(',', start);
    std::string cell = trim(std::string_view(line).substr(start, comma == std::string::npos ? comma : comma - start));
    if (cell.size() >= 2 && cell.front() == '"' && cell.back() == '"') cell = cell.substr(1, cell.size() - 2);
    out.push_back(std::move(cell));
    if (comma == std::string::npos) return out;
    start = comma + 1;
  }
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open '" + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void write_text(const std::optional<std::string>& path, const std::string& text, std::ostream& out) {
  if (!path) {
    out << text;
    return;
  }
  std::ofstream file(*path, std::ios::binary);
  if (!file) throw DataError("cannot write '" + *path + "'");
  file << text;
  if (!file) throw DataError("error writing '" + *path + "'");
}

CsvTable single_column(const std::string& path) {
  CsvTable t = read_csv(path);
  if (t.header.size() != 1) {
    throw DataError(path + ": expected a single column, found " + std::to_string(t.header.size()));
  }
  return t;
}

std::map<std::string, Eigen::Index> name_index(const std::vector<std::string>& names, const std::string& source) {
  std::map<std::string, Eigen::Index> index;
  for (std::size_t j = 0; j < names.size(); ++j) {
    if (names[j].empty()) throw DataError(source + ": empty feature name in column " + std::to_string(j + 1));
    if (!index.emplace(names[j], static_cast<Eigen::Index>(j)).second) {
      throw DataError(source + ": duplicate feature name '" + names[j] + "'");
    }
  }
  return index;
}

/// Prior rows joined to the feature order by name; absent features get 0.
PriorEffects align_priors(const CsvTable& table, const std::vector<std::string>& features, const std::string& source,
                          std::ostream& err) {
  const auto feature_index = name_index(features, "features");
  PriorEffects priors;
  priors.names = table.header;
  priors.z = Matrix::Zero(static_cast<Eigen::Index>(features.size()), table.values.cols());
  std::vector<bool> seen(features.size(), false);
  for (std::size_t r = 0; r < table.labels.size(); ++r) {
    const std::string& name = table.labels[r];
    const auto it = feature_index.find(name);
    if (it == feature_index.end()) {
      throw DataError(source + ": feature '" + name + "' (line " + std::to_string(r + 2) +
                      ") does not appear in the features file");
    }
    if (seen[static_cast<std::size_t>(it->second)]) throw DataError(source + ": duplicate feature '" + name + "'");
    seen[static_cast<std::size_t>(it->second)] = true;
    priors.z.row(it->second) = table.values.row(static_cast<Eigen::Index>(r));
  }
  std::size_t missing = 0;
  for (std::size_t j = 0; j < features.size(); ++j) {
    if (seen[j]) continue;
    if (missing < 10) err << "note: no prior for feature '" << features[j] << "'; prior effect set to 0\n";
    ++missing;
  }
  if (missing > 10) err << "note: " << missing << " features without prior effects in total\n";
  return priors;
}

struct FitArgs {
  std::string features;
  std::string target;
  std::string priors;
  std::string family = "gaussian";
  std::string calibration = "iso";
  std::string stacking = "sta";
  double alpha = 1.0;
  int folds = 10;
  bool no_filter = false;
  std::vector<double> tau_grid;
  std::string model;
  std::optional<std::string> out;
};

struct PredictArgs {
  std::string features;
  std::string model;
  std::optional<std::string> out;
};

struct SimulateArgs {
  std::string protocol = "external";
  std::string family = "gaussian";
  int Ka = 5;
  double h = 5.0;
  std::optional<int> s;
  bool dense = false;
  bool sparse = false;
  std::optional<double> alpha;
  double rho_x = 0.5;
  double rho_beta = 0.5;
  std::optional<double> pi;
  double w = 0.5;
  int reps = 10;
  int n_test = 10000;
  int folds = 10;
  std::vector<std::string> methods;
  std::optional<std::string> out;
};

struct EvaluateArgs {
  std::string predictions;
  std::string truth;
  std::string family = "gaussian";
  std::optional<double> train_mean;
  std::optional<std::string> out;
};

int cmd_fit(const FitArgs& a, std::uint64_t seed, std::ostream& out, std::ostream& err) {
  const CsvTable features = read_csv(a.features);
  const CsvTable target = single_column(a.target);
  if (target.values.rows() != features.values.rows()) {
    throw DataError("features have " + std::to_string(features.values.rows()) + " rows but target has " +
                    std::to_string(target.values.rows()));
  }
  name_index(features.header, a.features);
  Dataset data;
  data.family = parse_family(a.family);
  data.x = features.values;
  data.y = target.values.col(0);
  data.validate();

  PriorEffects priors;
  priors.z.resize(data.p(), 0);
  if (!a.priors.empty()) priors = align_priors(read_csv(a.priors, true), features.header, a.priors, err);

  StackOptions opts;
  opts.mode = parse_stack_mode(a.stacking);
  opts.method = parse_calibration_method(a.calibration);
  opts.alpha = a.alpha;
  opts.folds = a.folds;
  opts.seed = seed;
  if (!a.tau_grid.empty()) opts.calibration.tau_grid = a.tau_grid;
  if (a.no_filter) opts.calibration.significance = 1.0;
  StackedModel model = fit_stacked(data, priors, opts);
  model.feature_names = features.header;
  write_text(std::optional<std::string>(a.model), model_to_json(model), out);

  json report;
  report["schema_version"] = kReportSchemaVersion;
  report["family"] = std::string(to_string(model.family));
  report["mode"] = std::string(to_string(model.mode));
  report["calibration_method"] = std::string(to_string(model.method));
  report["n"] = data.n();
  report["p"] = data.p();
  json sources = json::array();
  int retained = 0;
  for (std::size_t k = 0; k < model.sources.size(); ++k) {
    const CalibratedSource& s = model.sources[k];
    retained += s.retained ? 1 : 0;
    sources.push_back({{"name", model.source_names[k]},
                       {"pvalue", s.pvalue},
                       {"retained", s.retained},
                       {"omega", model.omega[static_cast<Eigen::Index>(k)]}});
  }
  report["sources"] = std::move(sources);
  report["sources_retained"] = retained;
  report["summary"] = std::to_string(retained) + " sources retained";
  if (model.mode == StackMode::standard) {
    const auto m = static_cast<Eigen::Index>(model.sources.size());
    report["omega_lambda_min"] = model.omega[m];
    report["omega_lambda_1se"] = model.omega[m + 1];
  }
  report["omega0"] = model.omega0;
  report["meta_lambda"] = model.meta_lambda;
  report["meta_cv_loss"] = model.diagnostics.meta_cv_loss;
  report["base_lambda_min"] = model.diagnostics.base_lambda_min;
  report["base_lambda_1se"] = model.diagnostics.base_lambda_1se;
  report["base_cv_loss"] = model.diagnostics.base_cv_loss;
  write_text(a.out, report.dump(2) + "\n", out);
  return kOk;
}

int cmd_predict(const PredictArgs& a, std::ostream& out, std::ostream& err) {
  const StackedModel model = model_from_json(read_file(a.model));
  const CsvTable features = read_csv(a.features);
  Matrix x;
  if (model.feature_names.empty()) {
    x = features.values;
  } else {
    const auto index = name_index(features.header, a.features);
    x.resize(features.values.rows(), model.p());
    for (Eigen::Index j = 0; j < model.p(); ++j) {
      const std::string& name = model.feature_names[static_cast<std::size_t>(j)];
      const auto it = index.find(name);
      if (it == index.end()) throw DataError(a.features + ": model feature '" + name + "' is missing");
      x.col(j) = features.values.col(it->second);
    }
    if (features.header.size() > model.feature_names.size()) {
      err << "note: ignoring " << features.header.size() - model.feature_names.size()
          << " feature columns not used by the model\n";
    }
  }
  const Vector mu = predict(model, x);
  std::string text = "prediction\n";
  for (Eigen::Index i = 0; i < mu.size(); ++i) text += format_double(mu[i]) + "\n";
  write_text(a.out, text, out);
  return kOk;
}

int cmd_simulate(const SimulateArgs& a, std::uint64_t seed, std::ostream& out) {
  ScenarioConfig cfg;
  cfg.protocol = parse_protocol(a.protocol);
  const Family family = parse_family(a.family);
  const bool sparse = a.sparse;
  cfg.alpha = a.alpha.value_or(sparse ? 1.0 : 0.0);
  const double source_alpha = sparse ? 0.95 : 0.0;
  if (cfg.protocol == SimProtocol::external) {
    cfg.external.family = family;
    cfg.external.Ka = a.Ka;
    cfg.external.h = a.h;
    cfg.external.s = a.s.value_or(sparse ? 15 : 50);
    cfg.external.n_test = a.n_test;
    cfg.external.source_alpha = source_alpha;
  } else {
    cfg.internal.family = family;
    cfg.internal.rho_x = a.rho_x;
    cfg.internal.rho_beta = a.rho_beta;
    cfg.internal.pi = a.pi.value_or(sparse ? 0.05 : 0.2);
    cfg.internal.w = a.w;
    cfg.internal.n_test = a.n_test;
    cfg.internal.source_alpha = source_alpha;
  }
  cfg.folds = a.folds;
  cfg.reps = a.reps;
  cfg.seed = seed;
  if (!a.methods.empty()) cfg.methods = a.methods;
  cfg.validate();
  write_text(a.out, results_csv(cfg, run_scenario(cfg)), out);
  return kOk;
}

int cmd_evaluate(const EvaluateArgs& a, std::ostream& out) {
  const Family family = parse_family(a.family);
  const CsvTable pred = single_column(a.predictions);
  const CsvTable truth = single_column(a.truth);
  if (pred.values.rows() != truth.values.rows()) {
    throw DataError("predictions have " + std::to_string(pred.values.rows()) + " rows but truth has " +
                    std::to_string(truth.values.rows()));
  }
  Dataset check;
  check.family = family;
  check.y = truth.values.col(0);
  check.x = Matrix::Zero(check.y.size(), 1);
  check.validate();
  const Vector mu = pred.values.col(0);
  if (family == Family::binomial && ((mu.array() < 0.0) || (mu.array() > 1.0)).any()) {
    throw DataError(a.predictions + ": binomial predictions must be probabilities in [0, 1]");
  }

  json metrics;
  metrics["schema_version"] = kReportSchemaVersion;
  metrics["family"] = std::string(to_string(family));
  metrics["n"] = mu.size();
  metrics["deviance"] = mean_deviance(family, check.y, mu);
  const double reference = a.train_mean.value_or(check.y.mean());
  metrics["reference_mean"] = reference;
  try {
    metrics["relative_loss"] = relative_test_loss(family, check.y, mu, reference);
  } catch (const UndefinedMetric&) {
    metrics["relative_loss"] = nullptr;
  }
  if (family == Family::binomial) {
    try {
      metrics["cindex"] = concordance_index(check.y, mu);
    } catch (const UndefinedMetric&) {
      metrics["cindex"] = nullptr;
    }
  }
  write_text(a.out, metrics.dump(2) + "\n", out);
  return kOk;
}

}  // namespace

CsvTable parse_csv(std::istream& in, const std::string& source, bool labelled) {
  CsvTable table;
  std::string line;
  std::size_t line_no = 0;
  bool have_header = false;
  std::vector<double> cells;
  std::size_t rows = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line_no == 1 && line.rfind("\xEF\xBB\xBF", 0) == 0) line.erase(0, 3);
    if (trim(line).empty()) continue;
    std::vector<std::string> fields = split_fields(line);
    if (!have_header) {
      if (labelled) {
        if (fields.size() < 1) throw DataError(source + ": header needs a feature-name column");
        fields.erase(fields.begin());
      }
      table.header = std::move(fields);
      have_header = true;
      continue;
    }
    const std::size_t expected = table.header.size() + (labelled ? 1 : 0);
    if (fields.size() != expected) {
      throw DataError(source + ":" + std::to_string(line_no) + ": expected " + std::to_string(expected) +
                      " fields, found " + std::to_string(fields.size()));
    }
    std::size_t first = 0;
    if (labelled) {
      table.labels.push_back(fields[0]);
      first = 1;
    }
    for (std::size_t c = first; c < fields.size(); ++c) {
      const std::string& cell = fields[c];
      double value = 0.0;
      const char* begin = cell.data();
      const char* end = begin + cell.size();
      if (!cell.empty() && *begin == '+') ++begin;
      const auto res = std::from_chars(begin, end, value);
      if (cell.empty() || res.ec != std::errc() || res.ptr != end || !std::isfinite(value)) {
        throw DataError(source + ":" + std::to_string(line_no) + ": column '" + table.header[c - first] +
                        "' holds '" + cell + "', not a finite number");
      }
      cells.push_back(value);
    }
    ++rows;
  }
  if (!have_header) throw DataError(source + ": empty file (a header row is required)");
  const auto ncol = static_cast<Eigen::Index>(table.header.size());
  table.values.resize(static_cast<Eigen::Index>(rows), ncol);
  for (std::size_t r = 0; r < rows; ++r) {
    for (Eigen::Index c = 0; c < ncol; ++c) {
      table.values(static_cast<Eigen::Index>(r), c) = cells[r * static_cast<std::size_t>(ncol) + static_cast<std::size_t>(c)];
    }
  }
  return table;
}

CsvTable read_csv(const std::string& path, bool labelled) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open '" + path + "'");
  return parse_csv(in, path, labelled);
}

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Transfer learning with calibrated prior effects and stacked penalised regression", "priorstack"};
  app.require_subcommand(1);
  app.fallthrough();
  std::uint64_t seed = 1;
  unsigned threads = 0;
  app.add_option("--seed", seed, "master random seed");
  app.add_option("--threads", threads, "worker thread cap (0 = all cores); results do not depend on it");

  const std::vector<std::string> families = {"gaussian", "binomial"};

  FitArgs fit;
  CLI::App* fit_cmd = app.add_subcommand("fit", "fit a stacked model and write it as JSON");
  fit_cmd->add_option("--features", fit.features, "features CSV (header = feature names)")->required();
  fit_cmd->add_option("--target", fit.target, "single-column target CSV")->required();
  fit_cmd->add_option("--priors", fit.priors, "prior CSV: feature name, then one column per source");
  fit_cmd->add_option("--family", fit.family)->check(CLI::IsMember(families));
  fit_cmd->add_option("--calibration", fit.calibration)->check(CLI::IsMember({"exp", "iso"}));
  fit_cmd->add_option("--stacking", fit.stacking)->check(CLI::IsMember({"sta", "sim"}));
  fit_cmd->add_option("--alpha", fit.alpha, "elastic-net mixing of the no-co-data learner")->check(CLI::Range(0.0, 1.0));
  fit_cmd->add_option("--folds", fit.folds)->check(CLI::Range(2, 1000000));
  fit_cmd->add_flag("--no-filter", fit.no_filter, "keep every non-zero source regardless of its p-value");
  fit_cmd->add_option("--tau-grid", fit.tau_grid, "comma-separated exponents for exponential calibration")
      ->delimiter(',');
  fit_cmd->add_option("--model", fit.model, "where to write the model JSON")->required();
  fit_cmd->add_option("--out", fit.out, "fit report path (default stdout)");

  PredictArgs pred;
  CLI::App* pred_cmd = app.add_subcommand("predict", "predict from a saved model");
  pred_cmd->add_option("--features", pred.features)->required();
  pred_cmd->add_option("--model", pred.model)->required();
  pred_cmd->add_option("--out", pred.out, "predictions CSV path (default stdout)");

  SimulateArgs sim;
  CLI::App* sim_cmd = app.add_subcommand("simulate", "run a simulation study and write a results CSV");
  sim_cmd->set_help_flag("--help", "print this help message and exit");
  sim_cmd->add_option("--protocol", sim.protocol)->check(CLI::IsMember({"external", "internal"}));
  sim_cmd->add_option("--family", sim.family)->check(CLI::IsMember(families));
  sim_cmd->add_option("--Ka", sim.Ka, "transferable sources (external)");
  sim_cmd->add_option("--h", sim.h, "coefficient perturbation (external)");
  sim_cmd->add_option("--s", sim.s, "causal features (external; default 50 dense, 15 sparse)");
  CLI::Option* dense_opt = sim_cmd->add_flag("--dense", sim.dense, "ridge setting (default)");
  CLI::Option* sparse_opt = sim_cmd->add_flag("--sparse", sim.sparse, "lasso setting");
  dense_opt->excludes(sparse_opt);
  sim_cmd->add_option("--alpha", sim.alpha, "target alpha (default 0 dense, 1 sparse)")->check(CLI::Range(0.0, 1.0));
  sim_cmd->add_option("--rho-x", sim.rho_x, "feature correlation base (internal)");
  sim_cmd->add_option("--rho-beta", sim.rho_beta, "coefficient correlation (internal)");
  sim_cmd->add_option("--pi", sim.pi, "causal proportion (internal; default 0.2 dense, 0.05 sparse)");
  sim_cmd->add_option("--w", sim.w, "signal weight (internal)");
  sim_cmd->add_option("--reps", sim.reps)->check(CLI::NonNegativeNumber);
  sim_cmd->add_option("--n-test", sim.n_test)->check(CLI::PositiveNumber);
  sim_cmd->add_option("--folds", sim.folds)->check(CLI::Range(2, 1000000));
  sim_cmd->add_option("--methods", sim.methods, "subset of baseline,exp.sta,exp.sim,iso.sta,iso.sim")
      ->delimiter(',');
  sim_cmd->add_option("--out", sim.out, "results CSV path (default stdout)");

  EvaluateArgs ev;
  CLI::App* ev_cmd = app.add_subcommand("evaluate", "score predictions against observed targets");
  ev_cmd->add_option("--predictions", ev.predictions)->required();
  ev_cmd->add_option("--truth", ev.truth)->required();
  ev_cmd->add_option("--family", ev.family)->check(CLI::IsMember(families));
  ev_cmd->add_option("--train-mean", ev.train_mean, "reference constant prediction (default: mean of truth)");
  ev_cmd->add_option("--out", ev.out, "metrics JSON path (default stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kUsage;
  }

  const unsigned previous_threads = max_threads();
  set_max_threads(threads);
  int code = kOk;
  try {
    if (*fit_cmd) {
      code = cmd_fit(fit, seed, out, err);
    } else if (*pred_cmd) {
      code = cmd_predict(pred, out, err);
    } else if (*sim_cmd) {
      code = cmd_simulate(sim, seed, out);
    } else {
      code = cmd_evaluate(ev, out);
    }
  } catch (const InvalidParameter& e) {
    err << "error: " << e.what() << "\n";
    code = kUsage;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << "\n";
    code = kDataError;
  } catch (const NumericalError& e) {
    err << "numerical error: " << e.what() << "\n";
    code = kNumericalError;
  }
  set_max_threads(previous_threads);
  return code;
}

}  // namespace priorstack::cli
