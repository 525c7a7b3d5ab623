#include <algorithm>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include <CLI11.hpp>

#include "adsnn/cli.hpp"
#include "adsnn/feature_viz.hpp"
#include "adsnn/serialize.hpp"
#include "adsnn/synthetic.hpp"

namespace adsnn::cli {
namespace {

namespace fs = std::filesystem;

constexpr const char* kVersion = "1.0.0";

struct Flags {
  std::optional<std::string> config, data, out, model, input, space;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> epochs, batch_size, folds, threads, input_size, budget, init, kernel, size, margin;
  std::optional<std::size_t> layer, filter, steps, per_class;
  std::optional<double> learning_rate, momentum, train_ratio, width, step_size;
  std::optional<std::string> polarity;
  bool all = false;
  bool use_test_accuracy = false;
};

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read " + path.string());
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

/// Writes files under one directory and records their hashes for the manifest.
class OutputDir {
 public:
  explicit OutputDir(fs::path root) : root_(std::move(root)) {}

  const fs::path& root() const { return root_; }
  fs::path path(const std::string& rel) const { return root_ / rel; }

  void prepare() { fs::create_directories(root_); }

  // `canonical` (timing columns blanked) is hashed instead of the file text when given.
  void text(const std::string& rel, const std::string& content, std::optional<std::string> canonical = {}) {
    const fs::path p = path(rel);
    fs::create_directories(p.parent_path());
    std::ofstream f(p, std::ios::binary);
    f << content;
    if (!f) throw DataError("cannot write " + p.string());
    artifacts_[rel] = sha256_hex(canonical ? *canonical : content);
  }

  // Records a file already written under the root.
  void file(const std::string& rel) { artifacts_[rel] = sha256_hex(read_file(path(rel))); }

  // Not hashed: wall-clock data.
  void timings(const nlohmann::json& j) {
    std::ofstream f(path("timings.json"), std::ios::binary);
    f << j.dump(2) << "\n";
  }

  void manifest(const std::string& command, const nlohmann::json& config, nlohmann::json extra = nlohmann::json::object()) {
    nlohmann::json m = std::move(extra);
    m["tool"] = "adsnn";
    m["version"] = kVersion;
    m["model_format_version"] = 1;
    m["command"] = command;
    m["config"] = config;
    m["config_hash"] = sha256_hex(config.dump());
    m["artifacts"] = artifacts_;
    m["timings_file"] = "timings.json";
    std::ofstream f(path("manifest.json"), std::ios::binary);
    f << m.dump(2) << "\n";
  }

 private:
  fs::path root_;
  std::map<std::string, std::string> artifacts_;
};

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

RunConfig resolve(const Flags& f) {
  RunConfig c = f.config ? load_config(*f.config) : RunConfig{};
  if (f.data) c.data = *f.data;
  if (f.out) c.out = *f.out;
  if (f.seed) c.seed = *f.seed;
  if (f.threads) c.threads = *f.threads;
  if (f.epochs) c.train.epochs = *f.epochs;
  if (f.batch_size) c.train.batch_size = *f.batch_size;
  if (f.learning_rate) c.train.learning_rate = *f.learning_rate;
  if (f.momentum) c.train.momentum = *f.momentum;
  if (f.folds) c.folds = *f.folds;
  if (f.train_ratio) c.train_ratio = *f.train_ratio;
  if (f.input_size) c.model.input_size = *f.input_size;
  if (f.width) c.model.width_multiplier = *f.width;
  if (f.budget) c.budget = *f.budget;
  if (f.init) c.init = *f.init;
  if (f.use_test_accuracy) c.use_test_accuracy = true;
  if (f.kernel) c.preprocess.kernel_size = *f.kernel;
  if (f.size) c.preprocess.target_size = *f.size;
  if (f.margin) c.preprocess.pad_margin = *f.margin;
  if (f.polarity) {
    if (*f.polarity == "dark") {
      c.preprocess.polarity = leaf::Polarity::Dark;
    } else if (*f.polarity == "bright") {
      c.preprocess.polarity = leaf::Polarity::Bright;
    } else {
      throw ConfigError("--polarity must be dark or bright");
    }
  }
  if (f.steps) c.steps = *f.steps;
  if (f.step_size) c.step_size = *f.step_size;
  if (f.space) {
    try {
      c.space = bo::SearchSpace::from_json(nlohmann::json::parse(read_file(*f.space)));
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(*f.space + ": " + e.what());
    } catch (const std::invalid_argument& e) {
      throw ConfigError(*f.space + ": " + e.what());
    }
  }
  c.model.seed = c.seed;
  c.train.seed = c.seed;
  return c;
}

fs::path require_path(const std::optional<fs::path>& p, const char* flag) {
  if (!p) throw ConfigError(std::string("missing required ") + flag);
  return *p;
}

std::size_t worker_count(const RunConfig& c) { return c.threads ? c.threads : worker_threads_from_env(); }

template <typename Fn>
void validated(const char* what, Fn fn) {
  try {
    fn();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string(what) + ": " + e.what());
  }
}

bool is_image_file(const fs::path& p) {
  std::string ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char ch) { return static_cast<char>(std::tolower(ch)); });
  return ext == ".png" || ext == ".ppm";
}

bool inside(const fs::path& child, const fs::path& parent) {
  const auto c = fs::weakly_canonical(child), p = fs::weakly_canonical(parent);
  auto ci = c.begin();
  for (auto pi = p.begin(); pi != p.end(); ++pi, ++ci) {
    if (ci == c.end() || *ci != *pi) return false;
  }
  return true;
}

// ---- preprocess -----------------------------------------------------------

int cmd_preprocess(const RunConfig& c, std::ostream& out, std::ostream& err) {
  const fs::path in = require_path(c.data, "--in");
  OutputDir dir(require_path(c.out, "--out"));
  validated("preprocess", [&] { c.preprocess.validate(); });
  if (!fs::is_directory(in)) throw DataError("input directory " + in.string() + " does not exist");

  std::vector<fs::path> files;
  for (const auto& entry : fs::recursive_directory_iterator(in)) {
    if (!entry.is_regular_file() || !is_image_file(entry.path())) continue;
    if (fs::exists(dir.root()) && inside(entry.path(), dir.root())) continue;
    files.push_back(fs::relative(entry.path(), in));
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw DataError("no .png or .ppm images under " + in.string());

  const auto start = std::chrono::steady_clock::now();
  std::vector<leaf::PreprocessResult> results(files.size());
  parallel_for(files.size(), worker_count(c), [&](std::size_t i) {
    const fs::path source = in / files[i];
    try {
      results[i] = leaf::preprocess_pipeline(read_image(source), c.preprocess);
    } catch (const DataError& e) {
      throw DataError(source.string() + ": " + e.what());
    }
  });

  dir.prepare();
  for (std::size_t i = 0; i < files.size(); ++i) {
    fs::path rel = files[i];
    rel.replace_extension(".png");
    const fs::path target = dir.path(rel.string());
    fs::create_directories(target.parent_path());
    write_png(results[i].image, target);
    dir.file(rel.generic_string());
    nlohmann::json meta = results[i].metadata.to_json();
    meta["source"] = files[i].generic_string();
    fs::path sidecar = rel;
    sidecar.replace_extension(".json");
    dir.text(sidecar.generic_string(), meta.dump(2) + "\n");
  }
  dir.timings({{"seconds", seconds_since(start)}});
  dir.manifest("preprocess", c.to_json(), {{"images", files.size()}});
  out << "preprocessed " << files.size() << " images into " << dir.root().string() << "\n";
  (void)err;
  return kOk;
}

// ---- train ----------------------------------------------------------------

int cmd_train(RunConfig c, std::ostream& out, std::ostream& err) {
  const fs::path data_root = require_path(c.data, "--data");
  OutputDir dir(require_path(c.out, "--out"));
  validated("training options", [&] { c.train.validate(); });
  if (c.folds < 2) throw ConfigError("folds must be at least 2");
  if (!(c.train_ratio > 0.0 && c.train_ratio <= 1.0)) throw ConfigError("train_ratio must be in (0, 1]");

  const Dataset data = load_dataset(data_root, c.model.input_size);
  c.model.num_classes = data.num_classes();
  validated("model config", [&] { c.model.validate(); });

  CrossValidationOptions cv;
  cv.folds = c.folds;
  cv.train_ratio = c.train_ratio;
  cv.seed = c.seed;
  cv.threads = worker_count(c);
  cv.train = c.train;
  if (data.size() < c.folds) throw DataError("dataset has fewer images than folds");

  const auto start = std::chrono::steady_clock::now();
  auto result = cross_validate(data, c.model, cv, [&](std::size_t fold, const EpochRecord& r) {
    char line[128];
    std::snprintf(line, sizeof line, "fold %zu epoch %zu loss %.4f val %.4f\n", fold, r.epoch, r.train_loss,
                  r.val_accuracy);
    err << line << std::flush;
  });

  dir.prepare();
  const auto& report = result.report;
  dir.text("metrics.csv", metrics_csv_text(report, true), metrics_csv_text(report, false));
  dir.text("report.txt", report.render());
  nlohmann::json timings{{"total_seconds", seconds_since(start)}, {"fold_minutes", nlohmann::json::array()}};
  std::size_t best_fold = 0;
  for (std::size_t f = 0; f < report.folds.size(); ++f) {
    const auto name = std::to_string(f + 1);
    dir.text("history_fold" + name + ".csv", history_csv_text(report.folds[f].training));
    save_model(result.models[f], dir.path("model_fold" + name + ".adsnn"));
    dir.file("model_fold" + name + ".adsnn");
    timings["fold_minutes"].push_back(report.folds[f].train_minutes);
    if (report.fold_metrics[f].accuracy > report.fold_metrics[best_fold].accuracy) best_fold = f;
  }
  save_model(result.models[best_fold], dir.path("model.adsnn"));
  dir.file("model.adsnn");
  dir.timings(timings);
  dir.manifest("train", c.to_json(),
               {{"model_config_hash", result.models[best_fold].config_hash()},
                {"best_fold", best_fold + 1},
                {"classes", data.class_names}});
  out << report.render();
  return kOk;
}

// ---- eval -----------------------------------------------------------------

int cmd_eval(const RunConfig& c, const Flags& f, std::ostream& out) {
  if (!f.model) throw ConfigError("missing required --model");
  const fs::path data_root = require_path(c.data, "--data");
  OutputDir dir(require_path(c.out, "--out"));
  Model model = load_model(*f.model);
  const Dataset data = load_dataset(data_root, model.input_shape().at(0));
  if (data.num_classes() != model.num_classes()) {
    throw DataError("model has " + std::to_string(model.num_classes()) + " classes, dataset has " +
                    std::to_string(data.num_classes()));
  }
  IndexList all(data.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  const auto start = std::chrono::steady_clock::now();
  const ConfusionMatrix cm = evaluate(model, data, all);
  const FoldMetrics m = fold_metrics(cm);

  std::ostringstream confusion;
  confusion << "actual\\predicted";
  for (const auto& n : data.class_names) confusion << "," << n;
  confusion << "\n";
  for (std::size_t i = 0; i < cm.classes(); ++i) {
    confusion << data.class_names[i];
    for (std::size_t j = 0; j < cm.classes(); ++j) confusion << "," << cm.at(i, j);
    confusion << "\n";
  }
  std::ostringstream metrics;
  char buf[160];
  metrics << "class,precision,recall,f1,degenerate\n";
  for (std::size_t k = 0; k < cm.classes(); ++k) {
    const auto& pc = m.per_class[k];
    auto d = [](const Rational& r) { return static_cast<double>(r.numerator()) / static_cast<double>(r.denominator()); };
    std::snprintf(buf, sizeof buf, "%s,%.6f,%.6f,%.6f,%d\n", data.class_names[k].c_str(), d(pc.precision),
                  d(pc.recall), d(pc.f1), pc.degenerate ? 1 : 0);
    metrics << buf;
  }
  std::snprintf(buf, sizeof buf, "macro,%.6f,%.6f,%.6f,0\naccuracy,%.6f,,,0\n", m.precision_macro, m.recall_macro,
                m.f1_macro, m.accuracy);
  metrics << buf;

  dir.prepare();
  dir.text("confusion.csv", confusion.str());
  dir.text("metrics.csv", metrics.str());
  dir.timings({{"seconds", seconds_since(start)}});
  nlohmann::json cfg = c.to_json();
  cfg["model"] = model.config() ? model.config()->to_json() : nlohmann::json();
  dir.manifest("eval", cfg, {{"model_sha256", sha256_hex(read_file(*f.model))}, {"images", data.size()}});
  std::snprintf(buf, sizeof buf, "accuracy %.4f on %zu images\n", m.accuracy, data.size());
  out << buf;
  return kOk;
}

// ---- tune -----------------------------------------------------------------

int cmd_tune(RunConfig c, std::ostream& out, std::ostream& err) {
  const fs::path data_root = require_path(c.data, "--data");
  OutputDir dir(require_path(c.out, "--out"));
  validated("training options", [&] { c.train.validate(); });
  if (c.budget == 0) throw ConfigError("budget must be at least 1");
  const bo::SearchSpace space = c.space ? *c.space : bo::default_filter_space(c.model.attention_blocks.size());
  validated("search space", [&] {
    space.validate();
    bo::apply_candidate(c.model, space, space.denormalize(bo::Point(space.size(), 0.0)));
  });

  const Dataset data = load_dataset(data_root, c.model.input_size);
  c.model.num_classes = data.num_classes();
  validated("model config", [&] { c.model.validate(); });

  CrossValidationOptions cv;
  cv.folds = c.folds;
  cv.train_ratio = c.train_ratio;
  cv.seed = c.seed;
  cv.threads = worker_count(c);
  cv.train = c.train;
  bo::TuneOptions opts;
  opts.budget = c.budget;
  opts.initial = c.init;
  opts.seed = c.seed;
  opts.use_test_accuracy = c.use_test_accuracy;

  const auto start = std::chrono::steady_clock::now();
  const auto result = bo::tune_attention_filters(data, c.model, cv, space, opts, [&](const bo::BoRecord& r) {
    err << "candidate " << r.iteration << " " << space.format(r.x) << " ";
    if (r.y) {
      err << "accuracy " << *r.y << "\n";
    } else {
      err << "failed: " << r.error << "\n";
    }
  });

  dir.prepare();
  dir.text("tuning_log.csv", bo::tuning_log_csv(space, result.search, true),
           bo::tuning_log_csv(space, result.search, false));
  dir.text("best_config.json", result.best_config.to_json().dump(2) + "\n");
  nlohmann::json seconds = nlohmann::json::array();
  for (const auto& r : result.search.history) seconds.push_back(r.seconds);
  dir.timings({{"total_seconds", seconds_since(start)}, {"candidate_seconds", seconds}});
  nlohmann::json cfg = c.to_json();
  cfg["space"] = space.to_json();
  dir.manifest("tune", cfg, {{"best_candidate", space.format(*result.search.best_x)}});
  out << "best " << space.format(*result.search.best_x) << " accuracy " << result.best_accuracy << "\n";
  return kOk;
}

// ---- visualize ------------------------------------------------------------

int cmd_visualize(const RunConfig& c, const Flags& f, std::ostream& out) {
  if (!f.model) throw ConfigError("missing required --model");
  if (!f.layer) throw ConfigError("missing required --layer");
  if (f.filter && f.all) throw ConfigError("--filter and --all are exclusive");
  OutputDir dir(require_path(c.out, "--out"));
  if (!(c.step_size > 0)) throw ConfigError("step_size must be positive");
  Model model = load_model(*f.model);
  const std::size_t layer = *f.layer;
  if (layer >= model.size()) {
    throw ConfigError("--layer " + std::to_string(layer) + " outside model of " + std::to_string(model.size()) +
                      " layers (0-based)");
  }
  const Shape shape = model.layer_output_shape(layer);
  if (shape.size() != 3) throw ConfigError("layer " + std::to_string(layer) + " has no spatial output");
  const std::size_t channels = shape.back();
  if (f.filter && *f.filter >= channels) {
    throw ConfigError("--filter " + std::to_string(*f.filter) + " outside layer with " + std::to_string(channels) +
                      " channels");
  }
  std::optional<Image> input;
  if (f.input) input = read_image(*f.input);

  std::vector<std::size_t> filters;
  if (f.all) {
    for (std::size_t i = 0; i < channels; ++i) filters.push_back(i);
  } else if (f.filter) {
    filters.push_back(*f.filter);
  } else if (!input) {
    throw ConfigError("give --filter, --all or --input");
  }

  const auto start = std::chrono::steady_clock::now();
  dir.prepare();
  if (input) {
    const std::size_t size = model.input_shape().at(0);
    const Image rgb = resize_bilinear(to_rgb(*input), size, model.input_shape().at(1));
    const auto grid = viz::activation_maps(model, image_to_tensor(rgb), layer);
    const std::size_t cols = std::min<std::size_t>(8, grid.maps.size());
    viz::export_grid(grid.maps, cols, dir.path("activations.png"));
    dir.file("activations.png");
    std::string csv = "channel,blank\n";
    for (std::size_t i = 0; i < grid.channels; ++i) csv += std::to_string(i) + "," + (grid.blank[i] ? "1" : "0") + "\n";
    dir.text("activations.csv", csv);
  }
  viz::VizConfig vc;
  vc.steps = c.steps;
  vc.step_size = c.step_size;
  vc.seed = c.seed;
  std::vector<Image> tiles;
  for (std::size_t n : filters) {
    const auto v = viz::filter_visualization(model, layer, n, vc);
    const std::string name = "filter_" + std::to_string(n);
    write_png(v.image, dir.path(name + ".png"));
    dir.file(name + ".png");
    std::string csv = "step,loss\n";
    char buf[64];
    std::snprintf(buf, sizeof buf, "0,%.9g\n", v.initial_loss);
    csv += buf;
    for (std::size_t s = 0; s < v.loss_trace.size(); ++s) {
      std::snprintf(buf, sizeof buf, "%zu,%.9g\n", s + 1, v.loss_trace[s]);
      csv += buf;
    }
    dir.text("loss_" + name + ".csv", csv);
    if (v.zero_gradient) out << name << ": zero gradient, initialization returned\n";
    tiles.push_back(v.image);
  }
  if (tiles.size() > 1) {
    viz::export_grid(tiles, std::min<std::size_t>(8, tiles.size()), dir.path("filters.png"));
    dir.file("filters.png");
  }
  dir.timings({{"seconds", seconds_since(start)}});
  nlohmann::json cfg = c.to_json();
  cfg["layer"] = layer;
  cfg["filters"] = filters;
  dir.manifest("visualize", cfg, {{"model_sha256", sha256_hex(read_file(*f.model))}});
  out << "wrote " << filters.size() << " filter visualizations to " << dir.root().string() << "\n";
  return kOk;
}

// ---- cost / synth ---------------------------------------------------------

int cmd_cost(const RunConfig& c, std::ostream& out) {
  validated("model config", [&] { c.model.validate(); });
  const std::string csv = cost_table_csv(c.model);
  out << csv;
  if (c.out) {
    OutputDir dir(*c.out);
    dir.prepare();
    dir.text("cost.csv", csv);
    dir.timings(nlohmann::json::object());
    dir.manifest("cost", c.to_json());
  }
  return kOk;
}

int cmd_synth(const RunConfig& c, const Flags& f, std::ostream& out) {
  OutputDir dir(require_path(c.out, "--out"));
  const std::size_t per_class = f.per_class.value_or(100);
  const std::size_t size = f.size.value_or(64);
  if (per_class == 0) throw ConfigError("--per-class must be positive");
  if (size < 16) throw ConfigError("--size must be at least 16");
  dir.prepare();
  const std::size_t n = synth::write_shape_dataset(dir.root(), per_class, size, c.seed);
  for (const auto& entry : fs::recursive_directory_iterator(dir.root())) {
    if (entry.is_regular_file() && entry.path().extension() == ".png") {
      dir.file(fs::relative(entry.path(), dir.root()).generic_string());
    }
  }
  dir.timings(nlohmann::json::object());
  dir.manifest("synth", c.to_json(), {{"per_class", per_class}, {"size", size}});
  out << "wrote " << n << " images to " << dir.root().string() << "\n";
  return kOk;
}

}  // namespace

std::string cost_table_csv(const ModelConfig& config) {
  const Model model = build_adsnn(config);
  const auto layers = model.describe();
  std::string csv = "layer,type,kernel,in_channels,out_channels,input_size,standard_cost,dws_cost,reduction,reduction_exact\n";
  char buf[256];
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const auto& l = layers[i];
    if (l.kind != LayerKind::Conv && l.kind != LayerKind::DepthwiseSeparable) continue;
    conv::CostParams p;
    p.kernel_size = static_cast<std::int64_t>(l.kernel);
    p.in_channels = static_cast<std::int64_t>(l.input.at(2));
    p.out_channels = static_cast<std::int64_t>(l.output.at(2));
    p.input_size = static_cast<std::int64_t>(l.input.at(0));
    p.output_size = static_cast<std::int64_t>(l.output.at(0));
    const Rational r = conv::cost_reduction(p);
    std::snprintf(buf, sizeof buf, "%zu,%s,%lld,%lld,%lld,%lld,%lld,%lld,%.6f,%lld/%lld\n", i, to_string(l.kind).c_str(),
                  static_cast<long long>(p.kernel_size), static_cast<long long>(p.in_channels),
                  static_cast<long long>(p.out_channels), static_cast<long long>(p.input_size),
                  static_cast<long long>(conv::cost_standard(p)), static_cast<long long>(conv::cost_dws(p)),
                  static_cast<double>(r.numerator()) / static_cast<double>(r.denominator()),
                  static_cast<long long>(r.numerator()), static_cast<long long>(r.denominator()));
    csv += buf;
  }
  return csv;
}

int exit_code_for_current_exception(std::ostream& err) {
  try {
    throw;
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << "\n";
    return kData;
  } catch (const FormatError& e) {
    err << "data error: " << e.what() << "\n";
    return kData;
  } catch (const fs::filesystem_error& e) {
    err << "data error: " << e.what() << "\n";
    return kData;
  } catch (const NumericError& e) {
    err << "numeric error: " << e.what() << "\n";
    return kNumeric;
  } catch (const OverflowError& e) {
    err << "numeric error: " << e.what() << "\n";
    return kNumeric;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kUsage;
  }
}

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Depthwise-separable attention network toolkit for leaf disease images", "adsnn"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kVersion);
  Flags f;

  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", f.config, "JSON config file; flags override its values");
    sub->add_option("--seed", f.seed, "Global seed");
    sub->add_option("--threads", f.threads, "Worker threads (0 = ADSNN_THREADS or all cores)");
  };
  auto model_flags = [&](CLI::App* sub) {
    sub->add_option("--input-size", f.input_size, "Model input size");
    sub->add_option("--width", f.width, "Width multiplier");
  };
  auto train_flags = [&](CLI::App* sub) {
    sub->add_option("--data", f.data, "Dataset root with one directory per class");
    sub->add_option("--out", f.out, "Output directory");
    sub->add_option("--epochs", f.epochs, "Epochs per fold (default 100)");
    sub->add_option("--batch-size", f.batch_size, "Mini-batch size");
    sub->add_option("--lr", f.learning_rate, "Learning rate");
    sub->add_option("--momentum", f.momentum, "SGD momentum");
    sub->add_option("--folds", f.folds, "Cross-validation folds");
    sub->add_option("--train-ratio", f.train_ratio, "Share of each training part used for fitting");
    model_flags(sub);
  };

  auto* pre = app.add_subcommand("preprocess", "Segment, align and crop leaf images");
  common(pre);
  pre->add_option("--in", f.data, "Input directory");
  pre->add_option("--out", f.out, "Output directory");
  pre->add_option("--size", f.size, "Output size (default 224)");
  pre->add_option("--kernel", f.kernel, "Opening kernel size (default 5)");
  pre->add_option("--margin", f.margin, "Crop margin in pixels (default 4)");
  pre->add_option("--polarity", f.polarity, "Foreground class: dark or bright");

  auto* train_cmd = app.add_subcommand("train", "Cross-validated training");
  common(train_cmd);
  train_flags(train_cmd);

  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a saved model on a dataset");
  common(eval_cmd);
  eval_cmd->add_option("--model", f.model, "Model file");
  eval_cmd->add_option("--data", f.data, "Dataset root");
  eval_cmd->add_option("--out", f.out, "Output directory");

  auto* tune = app.add_subcommand("tune", "Bayesian optimization of attention filters");
  common(tune);
  train_flags(tune);
  tune->add_option("--budget", f.budget, "Objective evaluations (default 12)");
  tune->add_option("--init", f.init, "Random initial points (default max(5, 2 * dims))");
  tune->add_option("--space", f.space, "Search space JSON file");
  tune->add_flag("--use-test-accuracy", f.use_test_accuracy, "Score candidates on held-out folds");

  auto* vis = app.add_subcommand("visualize", "Activation maps and filter visualizations");
  common(vis);
  vis->add_option("--model", f.model, "Model file");
  vis->add_option("--layer", f.layer, "Layer index (0-based)");
  vis->add_option("--filter", f.filter, "Filter index");
  vis->add_flag("--all", f.all, "Every filter of the layer");
  vis->add_option("--input", f.input, "Image for activation maps");
  vis->add_option("--out", f.out, "Output directory");
  vis->add_option("--steps", f.steps, "Gradient ascent steps (default 30)");
  vis->add_option("--step-size", f.step_size, "Step size on normalized gradients (default 1)");

  auto* cost = app.add_subcommand("cost", "Per-layer standard vs depthwise-separable cost table");
  common(cost);
  model_flags(cost);
  cost->add_option("--out", f.out, "Also write cost.csv and a manifest here");

  auto* synth_cmd = app.add_subcommand("synth", "Write a seeded 4-class colored-shape dataset");
  common(synth_cmd);
  synth_cmd->add_option("--out", f.out, "Output directory");
  synth_cmd->add_option("--per-class", f.per_class, "Images per class (default 100)");
  synth_cmd->add_option("--size", f.size, "Image size (default 64)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kUsage;
  }

  try {
    RunConfig c = resolve(f);
    if (app.got_subcommand(pre)) return cmd_preprocess(c, out, err);
    if (app.got_subcommand(train_cmd)) return cmd_train(c, out, err);
    if (app.got_subcommand(eval_cmd)) return cmd_eval(c, f, out);
    if (app.got_subcommand(tune)) return cmd_tune(c, out, err);
    if (app.got_subcommand(vis)) return cmd_visualize(c, f, out);
    if (app.got_subcommand(cost)) return cmd_cost(c, out);
    return cmd_synth(c, f, out);
  } catch (...) {
    return exit_code_for_current_exception(err);
  }
}

}  // namespace adsnn::cli
