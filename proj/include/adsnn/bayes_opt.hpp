#pragma once

#include <algorithm>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "adsnn/model.hpp"
#include "adsnn/train_eval.hpp"

namespace adsnn::bo {

using Point = std::vector<double>;

enum class DimKind { Integer, Continuous };

struct Dimension {
  std::string name;
  double lower = 0.0;
  double upper = 1.0;
  DimKind kind = DimKind::Continuous;
};

struct SearchSpace {
  std::vector<Dimension> dims;

  std::size_t size() const { return dims.size(); }
  void validate() const;
  // Unit cube <-> native units. Zero-width dimensions map to 0.
  Point normalize(const Point& x) const;
  // Clamps to the bounds and rounds integer dimensions.
  Point denormalize(const Point& u) const;
  // Snaps a unit-cube point onto the evaluable set (integer dims rounded).
  Point snap(const Point& u) const;
  // "name=value;name=value"
  std::string format(const Point& x) const;

  // [{"name": .., "lower": .., "upper": .., "kind": "integer"|"continuous"}, ...]
  nlohmann::json to_json() const;
  static SearchSpace from_json(const nlohmann::json& j);
};

// One attention block per dimension, filters in [8, 64].
SearchSpace default_filter_space(std::size_t blocks = 2);

struct Observation {
  Point x;  // unit cube
  double y = 0.0;
};

struct GpHyperparams {
  double signal_variance = 1.0;
  std::vector<double> length_scales;  // per dimension; empty = 0.2 everywhere
  double jitter = 1e-10;
  double max_jitter = 1e-6;
};

struct GpState {
  std::vector<Observation> observations;  // after merging duplicates
  GpHyperparams hyper;
  double jitter = 0.0;         // value that made the factorization succeed
  std::vector<double> factor;  // lower-triangular L, row-major n x n, L L^T = K + jitter I
  std::vector<double> alpha;   // (K + jitter I)^-1 y

  std::size_t size() const { return observations.size(); }
  double factor_at(std::size_t i, std::size_t j) const { return factor[i * size() + j]; }
};

double se_kernel(const Point& a, const Point& b, const GpHyperparams& hyper);

/// Merges observations with identical x (mean of y), then factorizes the
/// kernel matrix, escalating the jitter tenfold up to max_jitter.
/// Throws NumericError when every jitter level fails.
GpState gp_fit(const std::vector<Observation>& observations, const GpHyperparams& hyper = {});

struct Posterior {
  double mean = 0.0;
  double variance = 0.0;
};

// Zero observations give the prior (0, signal_variance).
Posterior gp_posterior(const GpState& state, const Point& x);

double expected_improvement(double mean, double variance, double best_so_far);

inline constexpr std::size_t kCandidateCount = 2048;

/// Maximizes expected improvement over seeded shifted-Halton candidates plus
/// coordinate refinement of the best few. Acquisition is evaluated at the
/// snapped point, so the result is always evaluable. Native units.
Point propose_next(const GpState& state, const SearchSpace& space, std::uint64_t seed);

// Same search, returning the unit-cube point before denormalizing.
Point maximize_acquisition(const GpState& state, const SearchSpace& space, std::uint64_t seed);

using Objective = std::function<double(const Point&)>;

struct BoRecord {
  std::size_t iteration = 0;  // 1-based
  Point x;                    // native units
  std::optional<double> y;    // empty when the objective failed
  double best_so_far = 0.0;   // -inf until the first success
  double seconds = 0.0;
  std::string error;
};

struct BoResult {
  std::optional<Point> best_x;
  double best_y = 0.0;
  std::vector<BoRecord> history;
};

/// n0 uniform-random points, then fit / propose / observe until N
/// evaluations. Returns the best observed point (earliest on ties). The GP is
/// fitted on standardized y. A throwing or non-finite objective is recorded
/// with its message and the loop continues.
BoResult bo_loop(const Objective& objective, const SearchSpace& space, std::size_t n0, std::size_t n,
                 std::uint64_t seed, const GpHyperparams& hyper = {},
                 const std::function<void(const BoRecord&)>& on_record = {});

inline std::size_t default_initial_points(const SearchSpace& space) {
  return std::max<std::size_t>(5, 2 * space.size());
}

// iteration,candidate,accuracy,best_so_far,seconds
std::string tuning_log_csv(const SearchSpace& space, const BoResult& result, bool include_timing = true);

/// Dimension names: "blocks" sets the number of attention blocks,
/// "filters" the filters of every block, "filters_<i>" (1-based) those of
/// block i. A block with F filters gets F_conv = F and d_k = d_v = F rounded
/// up to a multiple of its heads.
ModelConfig apply_candidate(const ModelConfig& base, const SearchSpace& space, const Point& x);

struct TuneOptions {
  std::size_t budget = 12;
  std::size_t initial = 0;  // 0 = default_initial_points
  std::uint64_t seed = 0;
  bool use_test_accuracy = false;  // objective from held-out folds instead of validation
};

struct TuneResult {
  ModelConfig best_config;
  double best_accuracy = 0.0;
  BoResult search;
};

/// Objective: mean cross-validated validation accuracy (best epoch) of the
/// candidate model, or mean held-out fold accuracy with use_test_accuracy.
TuneResult tune_attention_filters(const Dataset& data, const ModelConfig& base, const CrossValidationOptions& cv,
                                  const SearchSpace& space, const TuneOptions& options,
                                  const std::function<void(const BoRecord&)>& on_evaluation = {});

}  // namespace adsnn::bo
