#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "adsnn/bayes_opt.hpp"
#include "adsnn/leaf_preprocess.hpp"
#include "adsnn/model.hpp"
#include "adsnn/train_eval.hpp"

namespace adsnn::cli {

// Bad flags, config text or option values (exit code 1).
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

enum ExitCode : int { kOk = 0, kUsage = 1, kData = 2, kNumeric = 3 };

/// Everything a subcommand needs, resolved from defaults, then the config
/// file, then command-line flags.
struct RunConfig {
  std::optional<std::filesystem::path> data;
  std::optional<std::filesystem::path> out;
  std::uint64_t seed = 0;
  std::size_t threads = 0;  // 0 = ADSNN_THREADS or hardware concurrency

  ModelConfig model;
  TrainOptions train;
  std::size_t folds = 5;
  double train_ratio = 0.7;

  std::size_t budget = 12;
  std::size_t init = 0;  // 0 = max(5, 2 * dims)
  std::optional<bo::SearchSpace> space;
  bool use_test_accuracy = false;

  leaf::PreprocessConfig preprocess;

  std::size_t steps = 30;
  double step_size = 1.0;

  nlohmann::json to_json() const;
};

// Keys accepted in a config file.
const std::vector<std::string>& config_keys();

std::size_t edit_distance(const std::string& a, const std::string& b);
// Closest known key within edit distance 3.
std::optional<std::string> suggest_key(const std::string& key);

/// Parses a JSON object of config keys over `base`. Syntax errors report
/// line and column; unknown keys name the closest known key.
RunConfig parse_config_text(const std::string& text, RunConfig base = {});
RunConfig load_config(const std::filesystem::path& path);

// Exit code for an in-flight exception (call inside a catch block).
int exit_code_for_current_exception(std::ostream& err);

/// Entry point: adsnn <preprocess|train|eval|tune|visualize|cost|synth> [flags].
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

// "layer,type,kernel,in_channels,out_channels,input_size,standard_cost,dws_cost,reduction,reduction_exact"
std::string cost_table_csv(const ModelConfig& config);

}  // namespace adsnn::cli
