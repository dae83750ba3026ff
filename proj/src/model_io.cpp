#include "priorstack/model_io.hpp"

#include <json.hpp>

#include "priorstack/errors.hpp"

namespace priorstack {

namespace {

using nlohmann::json;

json to_array(const Vector& v) {
  json out = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) out.push_back(v[i]);
  return out;
}

Vector from_array(const json& j, std::string_view field) {
  if (!j.is_array()) throw DataError("model field '" + std::string(field) + "' must be an array");
  Vector out(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) {
    if (!j[i].is_number()) throw DataError("model field '" + std::string(field) + "' must hold numbers");
    out[static_cast<Eigen::Index>(i)] = j[i].get<double>();
  }
  return out;
}

json optional_number(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

std::optional<double> read_optional(const json& j, const char* key) {
  if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
  return j.at(key).get<double>();
}

}  // namespace

std::string model_to_json(const StackedModel& model) {
  json doc;
  doc["schema_version"] = kModelSchemaVersion;
  doc["family"] = std::string(to_string(model.family));
  doc["mode"] = std::string(to_string(model.mode));
  doc["calibration_method"] = std::string(to_string(model.method));
  json sources = json::array();
  for (std::size_t k = 0; k < model.sources.size(); ++k) {
    const CalibratedSource& s = model.sources[k];
    json entry;
    entry["name"] = k < model.source_names.size() ? model.source_names[k] : "source" + std::to_string(k + 1);
    entry["method"] = std::string(to_string(s.method));
    entry["theta"] = optional_number(s.theta);
    entry["tau"] = optional_number(s.tau);
    entry["lambda"] = optional_number(s.lambda);
    entry["alpha_k"] = s.alpha_k;
    entry["pvalue"] = s.pvalue;
    entry["retained"] = s.retained;
    entry["inverted"] = s.inverted;
    entry["gamma"] = to_array(s.gamma);
    sources.push_back(std::move(entry));
  }
  doc["sources"] = std::move(sources);
  doc["omega0"] = model.omega0;
  doc["omega"] = to_array(model.omega);
  doc["meta_lambda"] = model.meta_lambda;
  doc["intercept_star"] = model.intercept_star;
  doc["beta_star"] = to_array(model.beta_star);
  doc["beta_direct"] = to_array(model.beta_direct);
  doc["feature_names"] = model.feature_names;
  doc["fold_seed"] = model.fold_seed;
  return doc.dump(2) + "\n";
}

StackedModel model_from_json(std::string_view text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw DataError(std::string("model file is not valid JSON: ") + e.what());
  }
  try {
    const int version = doc.at("schema_version").get<int>();
    if (version > kModelSchemaVersion || version < 1) {
      throw DataError("unsupported model schema_version " + std::to_string(version) + " (this build reads up to " +
                      std::to_string(kModelSchemaVersion) + ")");
    }
    StackedModel model;
    model.family = parse_family(doc.at("family").get<std::string>());
    model.mode = parse_stack_mode(doc.at("mode").get<std::string>());
    model.method = parse_calibration_method(doc.at("calibration_method").get<std::string>());
    for (const json& entry : doc.at("sources")) {
      CalibratedSource s;
      s.method = parse_calibration_method(entry.at("method").get<std::string>());
      s.theta = read_optional(entry, "theta");
      s.tau = read_optional(entry, "tau");
      s.lambda = read_optional(entry, "lambda");
      s.alpha_k = entry.at("alpha_k").get<double>();
      s.pvalue = entry.at("pvalue").get<double>();
      s.retained = entry.at("retained").get<bool>();
      s.inverted = entry.value("inverted", false);
      s.gamma = from_array(entry.at("gamma"), "gamma");
      s.all_zero = s.gamma.isZero(0.0);
      model.source_names.push_back(entry.at("name").get<std::string>());
      model.sources.push_back(std::move(s));
    }
    model.omega0 = doc.value("omega0", 0.0);
    model.omega = from_array(doc.at("omega"), "omega");
    model.meta_lambda = doc.value("meta_lambda", 0.0);
    model.intercept_star = doc.at("intercept_star").get<double>();
    model.beta_star = from_array(doc.at("beta_star"), "beta_star");
    model.beta_direct = doc.contains("beta_direct") ? from_array(doc.at("beta_direct"), "beta_direct")
                                                    : Vector::Zero(model.beta_star.size());
    if (doc.contains("feature_names")) model.feature_names = doc.at("feature_names").get<std::vector<std::string>>();
    model.fold_seed = doc.value("fold_seed", std::uint64_t{0});
    for (const CalibratedSource& s : model.sources) {
      if (s.gamma.size() != model.beta_star.size()) throw DataError("source gamma length differs from beta_star");
    }
    if (!model.feature_names.empty() &&
        static_cast<Eigen::Index>(model.feature_names.size()) != model.beta_star.size()) {
      throw DataError("feature_names length differs from beta_star");
    }
    return model;
  } catch (const json::exception& e) {
    throw DataError(std::string("malformed model file: ") + e.what());
  } catch (const InvalidParameter& e) {
    throw DataError(std::string("malformed model file: ") + e.what());
  }
}

}  // namespace priorstack
