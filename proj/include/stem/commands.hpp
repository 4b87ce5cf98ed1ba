#pragma once

#include <exception>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "stem/config.hpp"
#include "stem/data.hpp"
#include "stem/model.hpp"
#include "stem/param_store.hpp"

namespace stem {

// Exit codes of the command-line tool.
inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitData = 3;
inline constexpr int kExitNumeric = 4;
int exit_code_for(const std::exception& e);

// Train/val/test after splitting and frequency filtering.
struct PreparedData {
  DataSplits splits;
  RemapTable remap;
};

// Builds splits from data.synthetic or data.csv (gen-data pipeline).
PreparedData prepare_data(const RunConfig& cfg);
// Loads a gen-data directory, or prepares in memory when no dir is set.
DataSplits load_splits(const RunConfig& cfg);

// A trained model directory: model.json + model.ckpt.
struct LoadedModel {
  Model model;
  ParamStore params;
  std::vector<std::string> task_names;
  std::string label;  // directory name
};
LoadedModel load_model_dir(const std::filesystem::path& dir);
void save_model_dir(const std::filesystem::path& dir, const Model& model, const ParamStore& params,
                    const std::vector<std::string>& task_names);

void cmd_gen_data(const RunConfig& cfg, const std::filesystem::path& out, bool force,
                  std::ostream& log);
void cmd_train(const RunConfig& cfg, const std::filesystem::path& out, bool force,
               std::ostream& log);
// split_only: write only the bucket assignment (bucket-split subcommand).
void cmd_eval(const RunConfig& cfg, const std::filesystem::path& checkpoint,
              const std::vector<std::filesystem::path>& single_task,
              const std::filesystem::path& out, bool force, bool split_only, std::ostream& log);
void cmd_analyze(const RunConfig& cfg, const std::vector<std::filesystem::path>& checkpoints,
                 const std::filesystem::path& out, bool force, std::ostream& log);

// Parses argv-style arguments (without the program name) and dispatches.
// Returns the process exit code; errors are reported on `err`.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace stem
