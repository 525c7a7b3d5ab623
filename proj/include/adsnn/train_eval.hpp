#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <boost/rational.hpp>

#include "adsnn/model.hpp"

namespace adsnn {

struct Sample {
  Tensor<float> image;  // HxWx3, scaled to [-1, 1]
  int label = 0;
  std::string path;
};

struct Dataset {
  std::vector<Sample> samples;
  std::vector<std::string> class_names;

  std::size_t size() const { return samples.size(); }
  std::size_t num_classes() const { return class_names.size(); }
  std::vector<int> labels() const;
  void validate() const;
};

/// One subdirectory per class (label = index in sorted name order) holding
/// .png / .ppm files. When `image_size` is set every image must be that square size.
Dataset load_dataset(const std::filesystem::path& root, std::optional<std::size_t> image_size = {});

using IndexList = std::vector<std::size_t>;

struct Fold {
  IndexList train;
  IndexList test;
};

// Stratified: each class is shuffled with `seed` and dealt round-robin over the
// folds, continuing the rotation from one class to the next.
std::vector<Fold> kfold_split(const std::vector<int>& labels, std::size_t k, std::uint64_t seed);

struct TrainValSplit {
  IndexList train;
  IndexList val;
  std::vector<std::string> warnings;
};

// Per class, llround(ratio * n) samples go to training.
TrainValSplit train_val_split(const IndexList& indices, const std::vector<int>& labels, double ratio,
                              std::uint64_t seed);

struct TrainOptions {
  std::size_t epochs = 100;
  std::size_t batch_size = 16;
  double learning_rate = 0.01;
  double momentum = 0.9;
  std::uint64_t seed = 0;

  void validate() const;
};

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0.0;
  double val_accuracy = 0.0;
};

struct TrainResult {
  std::vector<EpochRecord> history;
  std::size_t best_epoch = 0;
  double best_val_accuracy = 0.0;
};

/// Mini-batch SGD with momentum (v = mu v + g; p -= lr v) over cross-entropy.
/// The weights of the epoch with the highest validation accuracy (earliest on
/// ties; the last epoch when `val` is empty) are restored before returning.
/// A non-finite loss throws NumericError naming the epoch and batch.
TrainResult train(Model& model, const Dataset& data, const IndexList& train_idx, const IndexList& val_idx,
                  const TrainOptions& options, const std::function<void(const EpochRecord&)>& on_epoch = {});

using Rational = boost::rational<std::int64_t>;

/// counts(i, j): samples of actual class i predicted as j.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(std::size_t classes = 0);

  std::size_t classes() const { return classes_; }
  std::int64_t& at(std::size_t actual, std::size_t predicted);
  std::int64_t at(std::size_t actual, std::size_t predicted) const;
  void add(std::size_t actual, std::size_t predicted);
  std::int64_t total() const;
  ConfusionMatrix& operator+=(const ConfusionMatrix& other);

  bool operator==(const ConfusionMatrix&) const = default;

 private:
  std::size_t classes_;
  std::vector<std::int64_t> counts_;
};

// Eval-mode argmax per sample, lowest class index on ties.
ConfusionMatrix evaluate(Model& model, const Dataset& data, const IndexList& indices, std::size_t batch_size = 32);
std::vector<int> predict(Model& model, const Tensor<float>& batch);

// Zero denominators give 0 (see metric_is_degenerate).
Rational precision(const ConfusionMatrix& cm, std::size_t cls);
Rational recall(const ConfusionMatrix& cm, std::size_t cls);
Rational f1(const ConfusionMatrix& cm, std::size_t cls);
Rational accuracy(const ConfusionMatrix& cm);
// Sum of diagonal over sum of all entries, pooled over classes.
Rational micro_recall(const ConfusionMatrix& cm);
// True when the class was neither predicted nor present, or one of its
// precision/recall denominators is zero.
bool metric_is_degenerate(const ConfusionMatrix& cm, std::size_t cls);

struct ClassMetrics {
  Rational precision, recall, f1;
  bool degenerate = false;
};

struct FoldReport {
  std::size_t fold = 0;
  ConfusionMatrix confusion;
  double train_accuracy = 0.0;
  double train_minutes = 0.0;
  TrainResult training;
};

struct MeanSd {
  double mean = 0.0;
  double sd = 0.0;  // sample standard deviation (n - 1); 0 for a single value
};

MeanSd mean_sd(const std::vector<double>& values);
// "94.65 (2.07)"
std::string format_mean_sd(const MeanSd& value, int decimals = 2);

struct FoldMetrics {
  double accuracy = 0.0, precision_macro = 0.0, recall_macro = 0.0, f1_macro = 0.0;
  std::vector<ClassMetrics> per_class;
};

FoldMetrics fold_metrics(const ConfusionMatrix& cm);

struct CvReport {
  std::vector<std::string> class_names;
  std::vector<FoldReport> folds;
  std::vector<FoldMetrics> fold_metrics;
  MeanSd accuracy, precision_macro, recall_macro, f1_macro, train_accuracy;
  // [class] -> precision, recall, f1
  std::vector<std::array<MeanSd, 3>> per_class;
  std::vector<std::string> flagged;  // "fold 2: class hispa precision undefined"

  // Table-style summary in percent, "mean (SD)" cells.
  std::string render() const;
};

CvReport aggregate_cv(const std::vector<FoldReport>& folds, const std::vector<std::string>& class_names);

// Without timing the train_minutes cells are left empty, giving a run-independent text.
std::string metrics_csv_text(const CvReport& report, bool include_timing = true);
void write_metrics_csv(const CvReport& report, const std::filesystem::path& path);
std::string history_csv_text(const TrainResult& result);
void write_history_csv(const TrainResult& result, const std::filesystem::path& path);

struct CrossValidationOptions {
  std::size_t folds = 5;
  double train_ratio = 0.7;
  std::uint64_t seed = 0;
  std::size_t threads = 1;
  TrainOptions train;
};

struct CrossValidationResult {
  CvReport report;
  std::vector<Model> models;  // one per fold, best-validation weights
};

/// k-fold protocol: per fold, a stratified train/validation split of the
/// training part, training from a fresh seeded model, and evaluation on the
/// held-out fold. Folds run on up to `threads` workers.
CrossValidationResult cross_validate(const Dataset& data, const ModelConfig& config,
                                     const CrossValidationOptions& options,
                                     const std::function<void(std::size_t fold, const EpochRecord&)>& on_epoch = {});

// Worker count from ADSNN_THREADS (unset or 0 = hardware concurrency).
std::size_t worker_threads_from_env();

// Runs fn(i) for i in [0, n) on up to `threads` threads; rethrows the first failure.
void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& fn);

}  // namespace adsnn
