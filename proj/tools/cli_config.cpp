#include <algorithm>
#include <fstream>
#include <sstream>

#include "adsnn/cli.hpp"

namespace adsnn::cli {
namespace {

std::string line_column(const std::string& text, std::size_t byte) {
  std::size_t line = 1, column = 1;
  for (std::size_t i = 0; i < std::min(byte, text.size()); ++i) {
    if (text[i] == '\n') {
      ++line;
      column = 1;
    } else {
      ++column;
    }
  }
  // e.byte is one past the offending character
  return "line " + std::to_string(line) + ", column " + std::to_string(column > 1 ? column - 1 : column);
}

template <typename T>
T get(const nlohmann::json& value, const std::string& key) {
  try {
    return value.get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ConfigError("config key '" + key + "' has the wrong type: " + value.dump());
  }
}

std::size_t get_count(const nlohmann::json& value, const std::string& key) {
  if (!value.is_number_unsigned()) throw ConfigError("config key '" + key + "' must be a non-negative integer");
  return value.get<std::size_t>();
}

leaf::Polarity parse_polarity(const std::string& text) {
  if (text == "dark") return leaf::Polarity::Dark;
  if (text == "bright") return leaf::Polarity::Bright;
  throw ConfigError("polarity must be 'dark' or 'bright', got '" + text + "'");
}

}  // namespace

const std::vector<std::string>& config_keys() {
  static const std::vector<std::string> keys{
      "attention_blocks", "attention_memory_budget", "batch_size", "budget", "data", "epochs",
      "folds", "init", "input_size", "kernel_size", "learning_rate", "margin",
      "momentum", "out", "polarity", "seed", "space", "step_size",
      "steps", "target_size", "threads", "train_ratio", "use_test_accuracy", "width_multiplier"};
  return keys;
}

std::size_t edit_distance(const std::string& a, const std::string& b) {
  std::vector<std::size_t> prev(b.size() + 1), cur(b.size() + 1);
  for (std::size_t j = 0; j <= b.size(); ++j) prev[j] = j;
  for (std::size_t i = 1; i <= a.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j) {
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1)});
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

std::optional<std::string> suggest_key(const std::string& key) {
  std::optional<std::string> best;
  std::size_t best_distance = 4;
  for (const auto& k : config_keys()) {
    const std::size_t d = edit_distance(key, k);
    if (d < best_distance) {
      best_distance = d;
      best = k;
    }
  }
  return best;
}

nlohmann::json RunConfig::to_json() const {
  nlohmann::json blocks = nlohmann::json::array();
  for (const auto& b : model.attention_blocks) {
    blocks.push_back({{"filters", b.filters}, {"value_depth", b.value_depth}, {"key_depth", b.key_depth}, {"heads", b.heads}});
  }
  nlohmann::json j{{"seed", seed},
                   {"threads", threads},
                   {"input_size", model.input_size},
                   {"width_multiplier", model.width_multiplier},
                   {"attention_blocks", blocks},
                   {"attention_memory_budget", model.attention_memory_budget},
                   {"epochs", train.epochs},
                   {"batch_size", train.batch_size},
                   {"learning_rate", train.learning_rate},
                   {"momentum", train.momentum},
                   {"folds", folds},
                   {"train_ratio", train_ratio},
                   {"budget", budget},
                   {"init", init},
                   {"use_test_accuracy", use_test_accuracy},
                   {"kernel_size", preprocess.kernel_size},
                   {"target_size", preprocess.target_size},
                   {"margin", preprocess.pad_margin},
                   {"polarity", preprocess.polarity == leaf::Polarity::Dark ? "dark" : "bright"},
                   {"steps", steps},
                   {"step_size", step_size}};
  if (space) j["space"] = space->to_json();
  // Paths excluded.
  return j;
}

RunConfig parse_config_text(const std::string& text, RunConfig cfg) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("config parse error at " + line_column(text, e.byte) + ": " + e.what());
  }
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    const auto& keys = config_keys();
    if (std::find(keys.begin(), keys.end(), key) == keys.end()) {
      std::string message = "unknown config key '" + key + "'";
      if (const auto s = suggest_key(key)) message += "; did you mean '" + *s + "'?";
      throw ConfigError(message);
    }
    if (key == "data") {
      cfg.data = get<std::string>(value, key);
    } else if (key == "out") {
      cfg.out = get<std::string>(value, key);
    } else if (key == "seed") {
      if (!value.is_number_unsigned()) throw ConfigError("config key 'seed' must be a non-negative integer");
      cfg.seed = value.get<std::uint64_t>();
    } else if (key == "threads") {
      cfg.threads = get_count(value, key);
    } else if (key == "input_size") {
      cfg.model.input_size = get_count(value, key);
    } else if (key == "width_multiplier") {
      cfg.model.width_multiplier = get<double>(value, key);
    } else if (key == "attention_blocks") {
      if (!value.is_array()) throw ConfigError("attention_blocks must be an array of objects");
      cfg.model.attention_blocks.clear();
      for (const auto& b : value) {
        if (!b.is_object()) throw ConfigError("attention_blocks entries must be objects");
        AttentionBlockConfig block;
        for (const auto& [bk, bv] : b.items()) {
          if (bk == "filters") {
            block.filters = get_count(bv, bk);
          } else if (bk == "value_depth") {
            block.value_depth = get_count(bv, bk);
          } else if (bk == "key_depth") {
            block.key_depth = get_count(bv, bk);
          } else if (bk == "heads") {
            block.heads = get_count(bv, bk);
          } else {
            throw ConfigError("unknown attention block key '" + bk + "' (filters, value_depth, key_depth, heads)");
          }
        }
        cfg.model.attention_blocks.push_back(block);
      }
    } else if (key == "attention_memory_budget") {
      cfg.model.attention_memory_budget = get<std::int64_t>(value, key);
    } else if (key == "epochs") {
      cfg.train.epochs = get_count(value, key);
    } else if (key == "batch_size") {
      cfg.train.batch_size = get_count(value, key);
    } else if (key == "learning_rate") {
      cfg.train.learning_rate = get<double>(value, key);
    } else if (key == "momentum") {
      cfg.train.momentum = get<double>(value, key);
    } else if (key == "folds") {
      cfg.folds = get_count(value, key);
    } else if (key == "train_ratio") {
      cfg.train_ratio = get<double>(value, key);
    } else if (key == "budget") {
      cfg.budget = get_count(value, key);
    } else if (key == "init") {
      cfg.init = get_count(value, key);
    } else if (key == "space") {
      try {
        cfg.space = bo::SearchSpace::from_json(value);
      } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("bad search space: ") + e.what());
      } catch (const std::invalid_argument& e) {
        throw ConfigError(std::string("bad search space: ") + e.what());
      }
    } else if (key == "use_test_accuracy") {
      cfg.use_test_accuracy = get<bool>(value, key);
    } else if (key == "kernel_size") {
      cfg.preprocess.kernel_size = get_count(value, key);
    } else if (key == "target_size") {
      cfg.preprocess.target_size = get_count(value, key);
    } else if (key == "margin") {
      cfg.preprocess.pad_margin = get_count(value, key);
    } else if (key == "polarity") {
      cfg.preprocess.polarity = parse_polarity(get<std::string>(value, key));
    } else if (key == "steps") {
      cfg.steps = get_count(value, key);
    } else if (key == "step_size") {
      cfg.step_size = get<double>(value, key);
    }
  }
  return cfg;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::ostringstream text;
  text << in.rdbuf();
  try {
    return parse_config_text(text.str());
  } catch (const ConfigError& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

}  // namespace adsnn::cli
