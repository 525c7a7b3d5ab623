#include "adsnn/train_eval.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <fstream>
#include <mutex>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <thread>

#include "adsnn/image.hpp"
#include "adsnn/random.hpp"

namespace adsnn {
namespace {

bool is_image_file(const std::filesystem::path& p) {
  std::string ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return ext == ".png" || ext == ".ppm";
}

Tensor<float> gather(const Dataset& data, const IndexList& indices, std::size_t begin, std::size_t end) {
  const Shape& s = data.samples.at(indices.at(begin)).image.shape();
  Tensor<float> batch(Shape{end - begin, s[0], s[1], s[2]});
  auto out = batch.mutable_data();
  const std::size_t per = shape_size(s);
  for (std::size_t i = begin; i < end; ++i) {
    const auto& img = data.samples[indices[i]].image;
    if (img.shape() != s) throw DimensionError("dataset images differ in shape: " + data.samples[indices[i]].path);
    std::copy(img.data().begin(), img.data().end(), out.begin() + static_cast<std::ptrdiff_t>((i - begin) * per));
  }
  return batch;
}

double to_double(const Rational& r) { return static_cast<double>(r.numerator()) / static_cast<double>(r.denominator()); }

std::string fixed(double v, int decimals) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", decimals, v);
  return buf;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out << text;
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

}  // namespace

std::vector<int> Dataset::labels() const {
  std::vector<int> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back(s.label);
  return out;
}

void Dataset::validate() const {
  if (std::set<std::string>(class_names.begin(), class_names.end()).size() != class_names.size()) {
    throw DataError("duplicate class names");
  }
  for (const auto& s : samples) {
    if (s.label < 0 || static_cast<std::size_t>(s.label) >= class_names.size()) {
      throw DataError("label " + std::to_string(s.label) + " out of range for " + s.path);
    }
  }
}

Dataset load_dataset(const std::filesystem::path& root, std::optional<std::size_t> image_size) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(root)) throw DataError("dataset root " + root.string() + " is not a directory");
  std::vector<fs::path> class_dirs;
  for (const auto& entry : fs::directory_iterator(root)) {
    if (entry.is_directory() && entry.path().filename().string().front() != '.') class_dirs.push_back(entry.path());
  }
  std::sort(class_dirs.begin(), class_dirs.end());
  if (class_dirs.empty()) throw DataError("dataset root " + root.string() + " has no class directories");

  Dataset data;
  for (std::size_t label = 0; label < class_dirs.size(); ++label) {
    data.class_names.push_back(class_dirs[label].filename().string());
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(class_dirs[label])) {
      if (entry.is_regular_file() && is_image_file(entry.path())) files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());
    if (files.empty()) throw DataError("class directory " + class_dirs[label].string() + " has no images");
    for (const auto& file : files) {
      Image img = read_image(file);
      if (image_size && (img.height != *image_size || img.width != *image_size)) {
        throw DataError(file.string() + ": expected " + std::to_string(*image_size) + "x" +
                        std::to_string(*image_size) + ", got " + std::to_string(img.height) + "x" +
                        std::to_string(img.width));
      }
      data.samples.push_back({image_to_tensor(img), static_cast<int>(label), file.string()});
    }
  }
  const Shape& first = data.samples.front().image.shape();
  for (const auto& s : data.samples) {
    if (s.image.shape() != first) {
      throw DataError(s.path + ": size " + shape_string(s.image.shape()) + " differs from " + shape_string(first));
    }
  }
  return data;
}

std::vector<Fold> kfold_split(const std::vector<int>& labels, std::size_t k, std::uint64_t seed) {
  if (k < 2) throw std::invalid_argument("k-fold needs k >= 2");
  if (labels.empty()) throw std::invalid_argument("k-fold on an empty dataset");
  const int classes = *std::max_element(labels.begin(), labels.end()) + 1;
  std::vector<IndexList> by_class(static_cast<std::size_t>(classes));
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0) throw std::invalid_argument("negative label");
    by_class[static_cast<std::size_t>(labels[i])].push_back(i);
  }
  std::vector<Fold> folds(k);
  std::mt19937_64 rng(seed);
  std::size_t next = 0;
  for (std::size_t c = 0; c < by_class.size(); ++c) {
    auto& members = by_class[c];
    if (members.empty()) continue;
    if (members.size() < k) {
      throw std::invalid_argument("k=" + std::to_string(k) + " exceeds the " + std::to_string(members.size()) +
                                  " samples of class " + std::to_string(c));
    }
    std::shuffle(members.begin(), members.end(), rng);
    for (auto idx : members) {
      folds[next].test.push_back(idx);
      next = (next + 1) % k;
    }
  }
  for (std::size_t f = 0; f < k; ++f) {
    std::sort(folds[f].test.begin(), folds[f].test.end());
    for (std::size_t g = 0; g < k; ++g) {
      if (g != f) folds[f].train.insert(folds[f].train.end(), folds[g].test.begin(), folds[g].test.end());
    }
    std::sort(folds[f].train.begin(), folds[f].train.end());
  }
  return folds;
}

TrainValSplit train_val_split(const IndexList& indices, const std::vector<int>& labels, double ratio,
                              std::uint64_t seed) {
  if (!(ratio > 0.0 && ratio <= 1.0)) throw std::invalid_argument("train ratio must lie in (0, 1]");
  std::vector<IndexList> by_class;
  for (auto idx : indices) {
    const auto label = static_cast<std::size_t>(labels.at(idx));
    if (by_class.size() <= label) by_class.resize(label + 1);
    by_class[label].push_back(idx);
  }
  TrainValSplit out;
  std::mt19937_64 rng(seed);
  for (auto& members : by_class) {
    std::shuffle(members.begin(), members.end(), rng);
    const auto n_train = static_cast<std::size_t>(std::llround(ratio * static_cast<double>(members.size())));
    out.train.insert(out.train.end(), members.begin(), members.begin() + static_cast<std::ptrdiff_t>(n_train));
    out.val.insert(out.val.end(), members.begin() + static_cast<std::ptrdiff_t>(n_train), members.end());
  }
  std::sort(out.train.begin(), out.train.end());
  std::sort(out.val.begin(), out.val.end());
  if (out.val.empty()) out.warnings.push_back("validation set is empty; the last epoch's weights are kept");
  return out;
}

void TrainOptions::validate() const {
  if (batch_size == 0) throw std::invalid_argument("batch size must be positive");
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) throw std::invalid_argument("learning rate must be >= 0");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw std::invalid_argument("momentum must lie in [0, 1)");
}

TrainResult train(Model& model, const Dataset& data, const IndexList& train_idx, const IndexList& val_idx,
                  const TrainOptions& options, const std::function<void(const EpochRecord&)>& on_epoch) {
  options.validate();
  if (train_idx.empty()) throw std::invalid_argument("training set is empty");
  const auto params = model.parameters();
  std::vector<std::vector<float>> velocity;
  for (auto* p : params) velocity.emplace_back(p->size(), 0.0f);
  const auto lr = static_cast<float>(options.learning_rate), mu = static_cast<float>(options.momentum);

  std::vector<Tensor<float>> best_state;
  auto snapshot = [&] {
    best_state.clear();
    for (auto* t : model.state()) best_state.push_back(t->clone());
  };

  TrainResult result;
  std::mt19937_64 rng(options.seed);
  IndexList order = train_idx;
  for (std::size_t epoch = 1; epoch <= options.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    for (std::size_t begin = 0, batch_no = 1; begin < order.size(); begin += options.batch_size, ++batch_no) {
      const std::size_t end = std::min(begin + options.batch_size, order.size());
      const Tensor<float> batch = gather(data, order, begin, end);
      std::vector<int> labels;
      for (std::size_t i = begin; i < end; ++i) labels.push_back(data.samples[order[i]].label);

      Tape<float> tape;
      for (auto* p : params) *p = tape.watch(*p);
      const Tensor<float> loss = cross_entropy_loss(model.logits(batch, Mode::Train), labels);
      const Gradients<float> grads = tape.backward(loss);
      for (std::size_t i = 0; i < params.size(); ++i) {
        const auto g = grads[*params[i]].data();
        auto v = std::span<float>(velocity[i]);
        auto p = params[i]->mutable_data();
        for (std::size_t j = 0; j < p.size(); ++j) {
          v[j] = mu * v[j] + g[j];
          p[j] -= lr * v[j];
        }
        *params[i] = params[i]->detach();
      }
      const double value = loss.item();
      if (!std::isfinite(value)) {
        throw NumericError("non-finite training loss at epoch " + std::to_string(epoch) + ", batch " +
                           std::to_string(batch_no));
      }
      loss_sum += value * static_cast<double>(end - begin);
    }

    EpochRecord record{epoch, loss_sum / static_cast<double>(order.size()), 0.0};
    if (!val_idx.empty()) {
      record.val_accuracy = to_double(accuracy(evaluate(model, data, val_idx)));
      if (result.history.empty() || record.val_accuracy > result.best_val_accuracy) {
        result.best_val_accuracy = record.val_accuracy;
        result.best_epoch = epoch;
        snapshot();
      }
    } else {
      result.best_epoch = epoch;
    }
    result.history.push_back(record);
    if (on_epoch) on_epoch(record);
  }
  if (!best_state.empty()) {
    auto state = model.state();
    for (std::size_t i = 0; i < state.size(); ++i) {
      std::copy(best_state[i].data().begin(), best_state[i].data().end(), state[i]->mutable_data().begin());
    }
  }
  return result;
}

ConfusionMatrix::ConfusionMatrix(std::size_t classes) : classes_(classes), counts_(classes * classes, 0) {}

std::int64_t& ConfusionMatrix::at(std::size_t actual, std::size_t predicted) {
  if (actual >= classes_ || predicted >= classes_) throw std::out_of_range("confusion matrix index out of range");
  return counts_[actual * classes_ + predicted];
}

std::int64_t ConfusionMatrix::at(std::size_t actual, std::size_t predicted) const {
  if (actual >= classes_ || predicted >= classes_) throw std::out_of_range("confusion matrix index out of range");
  return counts_[actual * classes_ + predicted];
}

void ConfusionMatrix::add(std::size_t actual, std::size_t predicted) { ++at(actual, predicted); }

std::int64_t ConfusionMatrix::total() const { return std::accumulate(counts_.begin(), counts_.end(), std::int64_t{0}); }

ConfusionMatrix& ConfusionMatrix::operator+=(const ConfusionMatrix& other) {
  if (other.classes_ != classes_) throw std::invalid_argument("confusion matrices differ in class count");
  for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
  return *this;
}

std::vector<int> predict(Model& model, const Tensor<float>& batch) {
  const Tensor<float> out = model.logits(batch, Mode::Eval);
  const std::size_t rows = out.dim(0), cols = out.dim(1);
  std::vector<int> labels(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < cols; ++c) {
      if (out[r * cols + c] > out[r * cols + best]) best = c;
    }
    labels[r] = static_cast<int>(best);
  }
  return labels;
}

ConfusionMatrix evaluate(Model& model, const Dataset& data, const IndexList& indices, std::size_t batch_size) {
  if (batch_size == 0) throw std::invalid_argument("batch size must be positive");
  ConfusionMatrix cm(model.num_classes());
  for (std::size_t begin = 0; begin < indices.size(); begin += batch_size) {
    const std::size_t end = std::min(begin + batch_size, indices.size());
    const auto predicted = predict(model, gather(data, indices, begin, end));
    for (std::size_t i = begin; i < end; ++i) {
      cm.add(static_cast<std::size_t>(data.samples[indices[i]].label), static_cast<std::size_t>(predicted[i - begin]));
    }
  }
  return cm;
}

Rational precision(const ConfusionMatrix& cm, std::size_t cls) {
  std::int64_t predicted = 0;
  for (std::size_t j = 0; j < cm.classes(); ++j) predicted += cm.at(j, cls);
  return predicted == 0 ? Rational(0) : Rational(cm.at(cls, cls), predicted);
}

Rational recall(const ConfusionMatrix& cm, std::size_t cls) {
  std::int64_t actual = 0;
  for (std::size_t j = 0; j < cm.classes(); ++j) actual += cm.at(cls, j);
  return actual == 0 ? Rational(0) : Rational(cm.at(cls, cls), actual);
}

Rational f1(const ConfusionMatrix& cm, std::size_t cls) {
  const Rational p = precision(cm, cls), r = recall(cm, cls);
  if ((p + r).numerator() == 0) return Rational(0);
  return Rational(2) * p * r / (p + r);
}

Rational accuracy(const ConfusionMatrix& cm) {
  const std::int64_t total = cm.total();
  if (total == 0) return Rational(0);
  std::int64_t diag = 0;
  for (std::size_t i = 0; i < cm.classes(); ++i) diag += cm.at(i, i);
  return Rational(diag, total);
}

Rational micro_recall(const ConfusionMatrix& cm) {
  std::int64_t tp = 0, fn = 0;
  for (std::size_t i = 0; i < cm.classes(); ++i) {
    tp += cm.at(i, i);
    for (std::size_t j = 0; j < cm.classes(); ++j) {
      if (j != i) fn += cm.at(i, j);
    }
  }
  return tp + fn == 0 ? Rational(0) : Rational(tp, tp + fn);
}

bool metric_is_degenerate(const ConfusionMatrix& cm, std::size_t cls) {
  std::int64_t predicted = 0, actual = 0;
  for (std::size_t j = 0; j < cm.classes(); ++j) {
    predicted += cm.at(j, cls);
    actual += cm.at(cls, j);
  }
  return predicted == 0 || actual == 0;
}

MeanSd mean_sd(const std::vector<double>& values) {
  if (values.empty()) return {};
  const double n = static_cast<double>(values.size());
  const double mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
  if (values.size() == 1) return {mean, 0.0};
  double ss = 0.0;
  for (double v : values) ss += (v - mean) * (v - mean);
  return {mean, std::sqrt(ss / (n - 1))};
}

std::string format_mean_sd(const MeanSd& value, int decimals) {
  return fixed(value.mean, decimals) + " (" + fixed(value.sd, decimals) + ")";
}

FoldMetrics fold_metrics(const ConfusionMatrix& cm) {
  FoldMetrics m;
  m.accuracy = to_double(accuracy(cm));
  Rational p_sum(0), r_sum(0), f_sum(0);
  for (std::size_t c = 0; c < cm.classes(); ++c) {
    ClassMetrics cls{precision(cm, c), recall(cm, c), f1(cm, c), metric_is_degenerate(cm, c)};
    p_sum += cls.precision;
    r_sum += cls.recall;
    f_sum += cls.f1;
    m.per_class.push_back(cls);
  }
  const auto k = static_cast<std::int64_t>(std::max<std::size_t>(cm.classes(), 1));
  m.precision_macro = to_double(p_sum / k);
  m.recall_macro = to_double(r_sum / k);
  m.f1_macro = to_double(f_sum / k);
  return m;
}

CvReport aggregate_cv(const std::vector<FoldReport>& folds, const std::vector<std::string>& class_names) {
  CvReport report;
  report.class_names = class_names;
  report.folds = folds;
  std::vector<double> acc, prec, rec, f, train_acc;
  const std::size_t m = class_names.size();
  std::vector<std::array<std::vector<double>, 3>> per_class(m);
  for (const auto& fold : folds) {
    if (fold.confusion.classes() != m) throw std::invalid_argument("fold confusion matrix does not match class list");
    FoldMetrics fm = fold_metrics(fold.confusion);
    acc.push_back(fm.accuracy);
    prec.push_back(fm.precision_macro);
    rec.push_back(fm.recall_macro);
    f.push_back(fm.f1_macro);
    train_acc.push_back(fold.train_accuracy);
    for (std::size_t c = 0; c < m; ++c) {
      per_class[c][0].push_back(to_double(fm.per_class[c].precision));
      per_class[c][1].push_back(to_double(fm.per_class[c].recall));
      per_class[c][2].push_back(to_double(fm.per_class[c].f1));
      if (fm.per_class[c].degenerate) {
        report.flagged.push_back("fold " + std::to_string(fold.fold) + ": class " + class_names[c] +
                                 " has a zero precision or recall denominator (reported as 0)");
      }
    }
    report.fold_metrics.push_back(std::move(fm));
  }
  report.accuracy = mean_sd(acc);
  report.precision_macro = mean_sd(prec);
  report.recall_macro = mean_sd(rec);
  report.f1_macro = mean_sd(f);
  report.train_accuracy = mean_sd(train_acc);
  for (const auto& cls : per_class) report.per_class.push_back({mean_sd(cls[0]), mean_sd(cls[1]), mean_sd(cls[2])});
  return report;
}

std::string CvReport::render() const {
  auto pct = [](MeanSd v) { return format_mean_sd({100.0 * v.mean, 100.0 * v.sd}); };
  std::ostringstream os;
  os << folds.size() << "-fold cross-validation, mean (SD) in percent\n";
  os << "  accuracy        " << pct(accuracy) << "\n";
  os << "  precision       " << pct(precision_macro) << "\n";
  os << "  recall          " << pct(recall_macro) << "\n";
  os << "  f1              " << pct(f1_macro) << "\n";
  os << "  train accuracy  " << pct(train_accuracy) << "\n";
  os << "per class (precision / recall / f1)\n";
  for (std::size_t c = 0; c < class_names.size(); ++c) {
    os << "  " << class_names[c] << ": " << pct(per_class[c][0]) << " / " << pct(per_class[c][1]) << " / "
       << pct(per_class[c][2]) << "\n";
  }
  for (const auto& note : flagged) os << "note: " << note << "\n";
  return os.str();
}

std::string metrics_csv_text(const CvReport& report, bool include_timing) {
  std::ostringstream os;
  os << "fold,accuracy,precision_macro,recall_macro,f1_macro,train_minutes";
  for (const auto& name : report.class_names) os << ",precision_" << name << ",recall_" << name << ",f1_" << name;
  os << "\n";
  auto num = [](double v) { return fixed(v, 6); };
  for (std::size_t i = 0; i < report.folds.size(); ++i) {
    const auto& fm = report.fold_metrics[i];
    os << report.folds[i].fold << ',' << num(fm.accuracy) << ',' << num(fm.precision_macro) << ','
       << num(fm.recall_macro) << ',' << num(fm.f1_macro) << ','
       << (include_timing ? fixed(report.folds[i].train_minutes, 3) : std::string());
    for (const auto& cls : fm.per_class) {
      os << ',' << num(to_double(cls.precision)) << ',' << num(to_double(cls.recall)) << ',' << num(to_double(cls.f1));
    }
    os << "\n";
  }
  std::vector<double> minutes;
  for (const auto& fold : report.folds) minutes.push_back(fold.train_minutes);
  const MeanSd time = mean_sd(minutes);
  for (int row = 0; row < 2; ++row) {
    auto pick = [row](const MeanSd& v) { return row == 0 ? v.mean : v.sd; };
    os << (row == 0 ? "mean" : "sd") << ',' << num(pick(report.accuracy)) << ',' << num(pick(report.precision_macro))
       << ',' << num(pick(report.recall_macro)) << ',' << num(pick(report.f1_macro)) << ','
       << (include_timing ? fixed(pick(time), 3) : std::string());
    for (const auto& cls : report.per_class) {
      os << ',' << num(pick(cls[0])) << ',' << num(pick(cls[1])) << ',' << num(pick(cls[2]));
    }
    os << "\n";
  }
  return os.str();
}

void write_metrics_csv(const CvReport& report, const std::filesystem::path& path) {
  write_text(path, metrics_csv_text(report, true));
}

std::string history_csv_text(const TrainResult& result) {
  std::ostringstream os;
  os << "epoch,train_loss,val_accuracy\n";
  for (const auto& r : result.history) os << r.epoch << ',' << fixed(r.train_loss, 6) << ',' << fixed(r.val_accuracy, 6) << "\n";
  return os.str();
}

void write_history_csv(const TrainResult& result, const std::filesystem::path& path) {
  write_text(path, history_csv_text(result));
}

CrossValidationResult cross_validate(const Dataset& data, const ModelConfig& config,
                                     const CrossValidationOptions& options,
                                     const std::function<void(std::size_t, const EpochRecord&)>& on_epoch) {
  data.validate();
  if (data.num_classes() != config.num_classes) {
    throw std::invalid_argument("model has " + std::to_string(config.num_classes) + " classes, dataset has " +
                                std::to_string(data.num_classes()));
  }
  const auto labels = data.labels();
  const auto folds = kfold_split(labels, options.folds, options.seed);
  std::vector<FoldReport> reports(folds.size());
  std::vector<std::optional<Model>> models(folds.size());
  std::mutex callback_mutex;

  parallel_for(folds.size(), options.threads, [&](std::size_t f) {
    const auto start = std::chrono::steady_clock::now();
    const auto split = train_val_split(folds[f].train, labels, options.train_ratio, derive_seed(options.seed, 100 + f));
    ModelConfig fold_config = config;
    fold_config.seed = derive_seed(config.seed, f);
    Model model = build_adsnn(fold_config);
    TrainOptions topts = options.train;
    topts.seed = derive_seed(options.train.seed, 200 + f);
    FoldReport& report = reports[f];
    report.fold = f + 1;
    report.training = train(model, data, split.train, split.val, topts, [&](const EpochRecord& r) {
      if (!on_epoch) return;
      std::lock_guard lock(callback_mutex);
      on_epoch(f + 1, r);
    });
    report.train_minutes = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count() / 60.0;
    report.confusion = evaluate(model, data, folds[f].test);
    report.train_accuracy = to_double(accuracy(evaluate(model, data, split.train)));
    models[f] = std::move(model);
  });

  CrossValidationResult result;
  result.report = aggregate_cv(reports, data.class_names);
  for (auto& m : models) result.models.push_back(std::move(*m));
  return result;
}

std::size_t worker_threads_from_env() {
  const std::size_t hw = std::max(1u, std::thread::hardware_concurrency());
  const char* env = std::getenv("ADSNN_THREADS");
  if (!env || !*env) return hw;
  char* end = nullptr;
  const long v = std::strtol(env, &end, 10);
  if (*end != '\0' || v < 0) throw std::invalid_argument("ADSNN_THREADS must be a non-negative integer");
  return v == 0 ? hw : static_cast<std::size_t>(v);
}

void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& fn) {
  const std::size_t workers = std::min(std::max<std::size_t>(threads, 1), n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(failure_mutex);
          if (!failure) failure = std::current_exception();
          next = n;
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
}

}  // namespace adsnn
