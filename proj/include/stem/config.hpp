#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "stem/data.hpp"
#include "stem/model.hpp"
#include "stem/synthetic.hpp"
#include "stem/train.hpp"

namespace stem {

struct DataSection {
  // Directory written by gen-data (train/val/test.csv + schema.json).
  std::optional<std::string> dir;
  // Raw CSV to split and filter (gen-data only).
  std::optional<std::string> csv;
  std::optional<SyntheticConfig> synthetic;
  SplitRatios split;
  std::uint32_t min_count = 10;
};

struct EvalSection {
  // Task A of the bucket protocol; delta = b(f_focus) - b(f_other).
  std::size_t focus_task = 0;
  std::size_t other_task = 1;
  int lo = -4;
  int hi = 6;
  std::size_t n_buckets = 10;
  bool buckets = false;
};

struct AnalysisSection {
  double top_frac = 0.40;
  double bottom_frac = 0.40;
  std::size_t bins = 20;
  std::size_t user_field = 0;
  std::size_t item_field = 1;
  // Tables every analyzed checkpoint must provide; empty means no requirement.
  std::vector<std::string> tables;
};

struct RunConfig {
  std::uint64_t seed = 1;
  std::string out_dir;
  DataSection data;
  ModelConfig model;
  // num_tasks in `model` is only enforced when given explicitly.
  bool model_num_tasks_given = false;
  TrainConfig train;
  // More than one entry switches train into grid mode.
  std::vector<double> learning_rates = {1e-3};
  EvalSection eval;
  AnalysisSection analysis;

  // Overrides the master seed and every seed derived from it.
  void set_seed(std::uint64_t s);
};

// Unknown keys are rejected with a ConfigError naming the key path.
RunConfig parse_run_config(const nlohmann::json& doc);
RunConfig load_run_config(const std::filesystem::path& path);
// Fully resolved document (defaults filled); parse_run_config accepts it.
nlohmann::json to_json(const RunConfig& cfg);

nlohmann::json to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const SyntheticConfig& cfg);

}  // namespace stem
