#include "tsvr/run_config.hpp"

#include <fstream>
#include <set>

#include "tsvr/error.hpp"

namespace tsvr {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

void reject_unknown(const json& obj, const std::set<std::string>& allowed, const std::string& where) {
  if (!obj.is_object()) throw ConfigError(where + ": expected a JSON object");
  for (const auto& item : obj.items()) {
    if (!allowed.count(item.key())) {
      throw ConfigError(where + ": unknown key '" + item.key() + "'");
    }
  }
}

template <typename T>
void read(const json& obj, const char* key, T& out, const std::string& where) {
  if (!obj.contains(key)) return;
  const json& v = obj.at(key);
  try {
    if constexpr (std::is_same_v<T, double>) {
      if (!v.is_number()) throw ConfigError("expected a number");
    } else if constexpr (std::is_same_v<T, bool>) {
      if (!v.is_boolean()) throw ConfigError("expected true or false");
    } else if constexpr (std::is_integral_v<T>) {
      if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<long long>() >= 0)) {
        throw ConfigError("expected a non-negative integer");
      }
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (!v.is_string()) throw ConfigError("expected a string");
    }
    out = v.get<T>();
  } catch (const std::exception& e) {
    throw ConfigError(where + ": key '" + key + "': " + e.what());
  }
}

const std::set<std::string> kTrainKeys{
    "learning_rate", "max_iterations", "batch_size",     "lambda_rec",
    "lambda_ent",    "lambda_align",   "bn_momentum",    "bn_epsilon",
    "alignment_mode", "seed",          "log_every",      "embed_dim",
    "encoder_hidden", "metric_hidden", "domain_classifier_hidden"};

std::vector<double> number_or_list(const json& v, const char* key) {
  if (v.is_number()) return {v.get<double>()};
  if (v.is_array()) {
    std::vector<double> out;
    for (const auto& x : v) {
      if (!x.is_number()) throw ConfigError(std::string("synthetic spec: '") + key + "' must hold numbers");
      out.push_back(x.get<double>());
    }
    return out;
  }
  throw ConfigError(std::string("synthetic spec: '") + key + "' must be a number or a list");
}

}  // namespace

fs::path RunConfig::resolve(const fs::path& p) const {
  if (p.empty() || p.is_absolute()) return p;
  return base_dir / p;
}

json train_config_to_json(const TrainConfig& c) {
  return json{{"learning_rate", c.learning_rate},
              {"max_iterations", c.max_iterations},
              {"batch_size", c.batch_size},
              {"lambda_rec", c.lambda_rec},
              {"lambda_ent", c.lambda_ent},
              {"lambda_align", c.lambda_align},
              {"bn_momentum", c.bn_momentum},
              {"bn_epsilon", c.bn_epsilon},
              {"alignment_mode", std::string(alignment_mode_name(c.alignment_mode))},
              {"seed", c.seed},
              {"log_every", c.log_every},
              {"embed_dim", c.embed_dim},
              {"encoder_hidden", c.encoder_hidden},
              {"metric_hidden", c.metric_hidden},
              {"domain_classifier_hidden", c.domain_classifier_hidden}};
}

RunConfig run_config_from_json(const json& doc, const fs::path& base_dir) {
  const std::string where = "run config";
  std::set<std::string> allowed = kTrainKeys;
  allowed.insert({"manifest", "output_dir", "standardize", "normalize_attributes",
                  "label_propagation"});
  reject_unknown(doc, allowed, where);

  RunConfig cfg;
  cfg.base_dir = base_dir;
  TrainConfig& t = cfg.train;
  read(doc, "learning_rate", t.learning_rate, where);
  read(doc, "max_iterations", t.max_iterations, where);
  read(doc, "batch_size", t.batch_size, where);
  read(doc, "lambda_rec", t.lambda_rec, where);
  read(doc, "lambda_ent", t.lambda_ent, where);
  read(doc, "lambda_align", t.lambda_align, where);
  read(doc, "bn_momentum", t.bn_momentum, where);
  read(doc, "bn_epsilon", t.bn_epsilon, where);
  std::string mode(alignment_mode_name(t.alignment_mode));
  read(doc, "alignment_mode", mode, where);
  t.alignment_mode = parse_alignment_mode(mode);
  read(doc, "seed", t.seed, where);
  read(doc, "log_every", t.log_every, where);
  read(doc, "embed_dim", t.embed_dim, where);
  read(doc, "encoder_hidden", t.encoder_hidden, where);
  read(doc, "metric_hidden", t.metric_hidden, where);
  read(doc, "domain_classifier_hidden", t.domain_classifier_hidden, where);

  std::string manifest, output_dir = cfg.output_dir.string();
  read(doc, "manifest", manifest, where);
  read(doc, "output_dir", output_dir, where);
  cfg.manifest = manifest;
  cfg.output_dir = output_dir;
  read(doc, "standardize", cfg.standardize, where);
  read(doc, "normalize_attributes", cfg.normalize_attributes, where);

  if (doc.contains("label_propagation")) {
    const json& lp = doc.at("label_propagation");
    const std::string lw = where + ": label_propagation";
    reject_unknown(lp, {"enabled", "k", "omega", "iters"}, lw);
    read(lp, "enabled", cfg.label_propagation.enabled, lw);
    read(lp, "k", cfg.label_propagation.k, lw);
    read(lp, "omega", cfg.label_propagation.omega, lw);
    read(lp, "iters", cfg.label_propagation.iterations, lw);
    if (!(cfg.label_propagation.omega > 0.0 && cfg.label_propagation.omega < 1.0)) {
      throw ConfigError(lw + ": omega must lie in (0, 1)");
    }
    if (cfg.label_propagation.k == 0) throw ConfigError(lw + ": k must be at least 1");
  }
  t.validate();
  return cfg;
}

json run_config_to_json(const RunConfig& cfg) {
  json doc = train_config_to_json(cfg.train);
  doc["manifest"] = cfg.manifest.string();
  doc["output_dir"] = cfg.output_dir.string();
  doc["standardize"] = cfg.standardize;
  doc["normalize_attributes"] = cfg.normalize_attributes;
  doc["label_propagation"] = {{"enabled", cfg.label_propagation.enabled},
                              {"k", cfg.label_propagation.k},
                              {"omega", cfg.label_propagation.omega},
                              {"iters", cfg.label_propagation.iterations}};
  return doc;
}

void apply_override(json& doc, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw ConfigError("override '" + assignment + "' is not of the form key=value");
  }
  const std::string key = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  json value = json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;

  json* node = &doc;
  std::size_t start = 0;
  for (;;) {
    const auto dot = key.find('.', start);
    const std::string part = key.substr(start, dot == std::string::npos ? dot : dot - start);
    if (part.empty()) throw ConfigError("override '" + assignment + "' has an empty key segment");
    if (dot == std::string::npos) {
      (*node)[part] = value;
      return;
    }
    json& next = (*node)[part];
    if (next.is_null()) next = json::object();
    if (!next.is_object()) throw ConfigError("override '" + assignment + "': '" + part + "' is not a block");
    node = &next;
    start = dot + 1;
  }
}

RunConfig load_run_config(const fs::path& path, const std::vector<std::string>& overrides) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError("config " + path.string() + ": " + e.what());
  }
  if (!doc.is_object()) throw ConfigError("config " + path.string() + ": expected a JSON object");
  for (const auto& o : overrides) apply_override(doc, o);
  RunConfig cfg = run_config_from_json(doc, path.parent_path());
  cfg.overrides = overrides;
  return cfg;
}

ZslDataset load_run_dataset(const RunConfig& cfg) {
  if (cfg.manifest.empty()) throw ConfigError("run config has no 'manifest'");
  ZslDataset data = load_dataset(read_manifest(cfg.resolve(cfg.manifest)));
  if (cfg.standardize) data = standardize_features(data).dataset;
  if (cfg.normalize_attributes) normalize_attribute_rows(data);
  return data;
}

SyntheticSpec synthetic_spec_from_json(const json& doc) {
  const std::string where = "synthetic spec";
  reject_unknown(doc, {"source_classes", "target_classes", "feature_dim", "attribute_dim",
                       "samples_per_class", "attribute_style", "noise", "shift_scale",
                       "shift_offset", "seed"},
                 where);
  SyntheticSpec spec;
  read(doc, "source_classes", spec.source_classes, where);
  read(doc, "target_classes", spec.target_classes, where);
  read(doc, "feature_dim", spec.feature_dim, where);
  read(doc, "attribute_dim", spec.attribute_dim, where);
  read(doc, "samples_per_class", spec.samples_per_class, where);
  read(doc, "noise", spec.noise, where);
  read(doc, "seed", spec.seed, where);
  if (doc.contains("attribute_style")) {
    std::string style;
    read(doc, "attribute_style", style, where);
    if (style == "binary") {
      spec.attribute_style = AttributeStyle::Binary;
    } else if (style == "continuous") {
      spec.attribute_style = AttributeStyle::Continuous;
    } else {
      throw ConfigError(where + ": attribute_style must be 'binary' or 'continuous'");
    }
  }
  if (doc.contains("shift_scale")) spec.shift_scale = number_or_list(doc.at("shift_scale"), "shift_scale");
  if (doc.contains("shift_offset")) spec.shift_offset = number_or_list(doc.at("shift_offset"), "shift_offset");
  return spec;
}

json synthetic_spec_to_json(const SyntheticSpec& spec) {
  return json{{"source_classes", spec.source_classes},
              {"target_classes", spec.target_classes},
              {"feature_dim", spec.feature_dim},
              {"attribute_dim", spec.attribute_dim},
              {"samples_per_class", spec.samples_per_class},
              {"attribute_style",
               spec.attribute_style == AttributeStyle::Binary ? "binary" : "continuous"},
              {"noise", spec.noise},
              {"shift_scale", spec.shift_scale},
              {"shift_offset", spec.shift_offset},
              {"seed", spec.seed}};
}

}  // namespace tsvr
