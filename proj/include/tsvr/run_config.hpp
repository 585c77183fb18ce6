#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "tsvr/data.hpp"
#include "tsvr/inference.hpp"
#include "tsvr/training.hpp"

namespace tsvr {

// A run configuration file: the training hyper-parameters as flat keys plus
// the experiment plumbing. Relative paths resolve against the directory of
// the config file.
//
//   { "manifest": "data/manifest.json", "output_dir": "runs/a",
//     "learning_rate": 1e-5, "max_iterations": 50000, "alignment_mode": "dsbn",
//     "label_propagation": { "enabled": true, "k": 10, "omega": 0.9, "iters": 20 } }
struct RunConfig {
  TrainConfig train;
  std::filesystem::path manifest;
  std::filesystem::path output_dir = "run";
  bool standardize = false;
  bool normalize_attributes = false;
  LabelPropagationConfig label_propagation;
  std::filesystem::path base_dir;  // where relative paths resolve
  std::vector<std::string> overrides;  // as given, in order

  std::filesystem::path resolve(const std::filesystem::path& p) const;
};

// Unknown keys and ill-typed values throw ConfigError naming the key.
RunConfig run_config_from_json(const nlohmann::json& doc, const std::filesystem::path& base_dir);
RunConfig load_run_config(const std::filesystem::path& path,
                          const std::vector<std::string>& overrides = {});
nlohmann::json run_config_to_json(const RunConfig& config);

// "key=value" with dotted keys for nested blocks (label_propagation.k=5).
// The value is read as JSON when it parses, otherwise as a string.
void apply_override(nlohmann::json& doc, const std::string& assignment);

nlohmann::json train_config_to_json(const TrainConfig& config);

// Manifest load plus the optional preprocessing switches.
ZslDataset load_run_dataset(const RunConfig& config);

SyntheticSpec synthetic_spec_from_json(const nlohmann::json& doc);
nlohmann::json synthetic_spec_to_json(const SyntheticSpec& spec);

}  // namespace tsvr
