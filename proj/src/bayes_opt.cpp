#include "adsnn/bayes_opt.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numbers>
#include <random>
#include <stdexcept>

#include "adsnn/random.hpp"

namespace adsnn::bo {
namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double length_scale(const GpHyperparams& hyper, std::size_t d) {
  if (hyper.length_scales.empty()) return 0.2;
  return hyper.length_scales.at(d);
}

// In-place Cholesky of a row-major n x n matrix; false if not positive definite.
bool cholesky(std::vector<double>& a, std::size_t n) {
  for (std::size_t j = 0; j < n; ++j) {
    double diag = a[j * n + j];
    for (std::size_t k = 0; k < j; ++k) diag -= a[j * n + k] * a[j * n + k];
    if (!(diag > 0.0) || !std::isfinite(diag)) return false;
    const double ljj = std::sqrt(diag);
    a[j * n + j] = ljj;
    for (std::size_t i = j + 1; i < n; ++i) {
      double s = a[i * n + j];
      for (std::size_t k = 0; k < j; ++k) s -= a[i * n + k] * a[j * n + k];
      a[i * n + j] = s / ljj;
    }
    for (std::size_t k = j + 1; k < n; ++k) a[j * n + k] = 0.0;
  }
  return true;
}

// Solves L z = b.
std::vector<double> forward_solve(const std::vector<double>& l, std::size_t n, std::vector<double> b) {
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < i; ++k) b[i] -= l[i * n + k] * b[k];
    b[i] /= l[i * n + i];
  }
  return b;
}

// Solves L^T z = b.
std::vector<double> backward_solve(const std::vector<double>& l, std::size_t n, std::vector<double> b) {
  for (std::size_t i = n; i-- > 0;) {
    for (std::size_t k = i + 1; k < n; ++k) b[i] -= l[k * n + i] * b[k];
    b[i] /= l[i * n + i];
  }
  return b;
}

double radical_inverse(std::size_t index, unsigned base) {
  double result = 0.0, f = 1.0 / base;
  while (index > 0) {
    result += f * static_cast<double>(index % base);
    index /= base;
    f /= base;
  }
  return result;
}

unsigned nth_prime(std::size_t n) {
  unsigned count = 0;
  for (unsigned p = 2;; ++p) {
    bool prime = true;
    for (unsigned q = 2; q * q <= p; ++q) {
      if (p % q == 0) {
        prime = false;
        break;
      }
    }
    if (prime && count++ == n) return p;
  }
}

bool starts_with(const std::string& s, const std::string& prefix) { return s.rfind(prefix, 0) == 0; }

std::size_t round_up(std::size_t v, std::size_t multiple) { return (v + multiple - 1) / multiple * multiple; }

}  // namespace

void SearchSpace::validate() const {
  if (dims.empty()) throw std::invalid_argument("search space has no dimensions");
  for (const auto& d : dims) {
    if (!std::isfinite(d.lower) || !std::isfinite(d.upper) || d.lower > d.upper) {
      throw std::invalid_argument("dimension '" + d.name + "' needs finite bounds with lower <= upper");
    }
    if (d.kind == DimKind::Integer && std::ceil(d.lower) > std::floor(d.upper)) {
      throw std::invalid_argument("integer dimension '" + d.name + "' contains no integer");
    }
  }
}

Point SearchSpace::normalize(const Point& x) const {
  if (x.size() != dims.size()) throw std::invalid_argument("point dimension does not match the search space");
  Point u(x.size());
  for (std::size_t d = 0; d < x.size(); ++d) {
    const double width = dims[d].upper - dims[d].lower;
    u[d] = width > 0 ? std::clamp((x[d] - dims[d].lower) / width, 0.0, 1.0) : 0.0;
  }
  return u;
}

Point SearchSpace::denormalize(const Point& u) const {
  if (u.size() != dims.size()) throw std::invalid_argument("point dimension does not match the search space");
  Point x(u.size());
  for (std::size_t d = 0; d < u.size(); ++d) {
    const auto& dim = dims[d];
    double v = std::clamp(dim.lower + std::clamp(u[d], 0.0, 1.0) * (dim.upper - dim.lower), dim.lower, dim.upper);
    if (dim.kind == DimKind::Integer) v = std::clamp(std::round(v), std::ceil(dim.lower), std::floor(dim.upper));
    x[d] = v;
  }
  return x;
}

Point SearchSpace::snap(const Point& u) const { return normalize(denormalize(u)); }

std::string SearchSpace::format(const Point& x) const {
  std::string out;
  for (std::size_t d = 0; d < x.size() && d < dims.size(); ++d) {
    if (d) out += ';';
    char buf[64];
    if (dims[d].kind == DimKind::Integer) {
      std::snprintf(buf, sizeof buf, "%lld", static_cast<long long>(std::llround(x[d])));
    } else {
      std::snprintf(buf, sizeof buf, "%.17g", x[d]);
    }
    out += dims[d].name + "=" + buf;
  }
  return out;
}

nlohmann::json SearchSpace::to_json() const {
  nlohmann::json j = nlohmann::json::array();
  for (const auto& d : dims) {
    j.push_back({{"name", d.name},
                 {"lower", d.lower},
                 {"upper", d.upper},
                 {"kind", d.kind == DimKind::Integer ? "integer" : "continuous"}});
  }
  return j;
}

SearchSpace SearchSpace::from_json(const nlohmann::json& j) {
  if (!j.is_array()) throw std::invalid_argument("search space must be a JSON array of dimensions");
  SearchSpace space;
  for (const auto& item : j) {
    if (!item.is_object()) throw std::invalid_argument("search space dimension must be an object");
    for (const auto& [key, value] : item.items()) {
      if (key != "name" && key != "lower" && key != "upper" && key != "kind") {
        throw std::invalid_argument("unknown search space key '" + key + "'");
      }
    }
    Dimension d;
    d.name = item.at("name").get<std::string>();
    d.lower = item.at("lower").get<double>();
    d.upper = item.at("upper").get<double>();
    const std::string kind = item.value("kind", "integer");
    if (kind == "integer") {
      d.kind = DimKind::Integer;
    } else if (kind == "continuous") {
      d.kind = DimKind::Continuous;
    } else {
      throw std::invalid_argument("dimension kind must be 'integer' or 'continuous', got '" + kind + "'");
    }
    space.dims.push_back(d);
  }
  space.validate();
  return space;
}

SearchSpace default_filter_space(std::size_t blocks) {
  SearchSpace space;
  for (std::size_t i = 1; i <= blocks; ++i) space.dims.push_back({"filters_" + std::to_string(i), 8, 64, DimKind::Integer});
  return space;
}

double se_kernel(const Point& a, const Point& b, const GpHyperparams& hyper) {
  double s = 0.0;
  for (std::size_t d = 0; d < a.size(); ++d) {
    const double l = length_scale(hyper, d);
    const double diff = a[d] - b[d];
    s += diff * diff / (2 * l * l);
  }
  return hyper.signal_variance * std::exp(-s);
}

GpState gp_fit(const std::vector<Observation>& observations, const GpHyperparams& hyper) {
  if (observations.empty()) throw std::invalid_argument("gp_fit needs at least one observation");
  const std::size_t dims = observations.front().x.size();
  if (!hyper.length_scales.empty() && hyper.length_scales.size() != dims) {
    throw std::invalid_argument("length_scales must have one entry per dimension");
  }
  GpState state;
  state.hyper = hyper;
  std::vector<std::size_t> counts;
  for (const auto& obs : observations) {
    if (obs.x.size() != dims) throw std::invalid_argument("observations differ in dimension");
    auto it = std::find_if(state.observations.begin(), state.observations.end(),
                           [&](const Observation& o) { return o.x == obs.x; });
    if (it == state.observations.end()) {
      state.observations.push_back(obs);
      counts.push_back(1);
    } else {
      const auto i = static_cast<std::size_t>(it - state.observations.begin());
      it->y += obs.y;
      ++counts[i];
    }
  }
  for (std::size_t i = 0; i < counts.size(); ++i) state.observations[i].y /= static_cast<double>(counts[i]);

  const std::size_t n = state.size();
  std::vector<double> k(n * n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j <= i; ++j) {
      k[i * n + j] = k[j * n + i] = se_kernel(state.observations[i].x, state.observations[j].x, hyper);
    }
  }
  if (!(hyper.jitter >= 0.0) || !(hyper.max_jitter >= hyper.jitter)) {
    throw std::invalid_argument("jitter must satisfy 0 <= jitter <= max_jitter");
  }
  for (double jitter = hyper.jitter;; jitter = jitter > 0 ? jitter * 10 : hyper.max_jitter) {
    if (jitter > hyper.max_jitter * (1 + 1e-9)) break;
    std::vector<double> l = k;
    for (std::size_t i = 0; i < n; ++i) l[i * n + i] += jitter;
    if (!cholesky(l, n)) {
      if (jitter >= hyper.max_jitter) break;
      continue;
    }
    state.jitter = jitter;
    state.factor = std::move(l);
    std::vector<double> y(n);
    for (std::size_t i = 0; i < n; ++i) y[i] = state.observations[i].y;
    state.alpha = backward_solve(state.factor, n, forward_solve(state.factor, n, y));
    return state;
  }
  throw NumericError("kernel matrix factorization failed with jitter up to " + std::to_string(hyper.max_jitter));
}

Posterior gp_posterior(const GpState& state, const Point& x) {
  const std::size_t n = state.size();
  if (n == 0) return {0.0, state.hyper.signal_variance};
  std::vector<double> ks(n);
  for (std::size_t i = 0; i < n; ++i) ks[i] = se_kernel(state.observations[i].x, x, state.hyper);
  Posterior p;
  for (std::size_t i = 0; i < n; ++i) p.mean += ks[i] * state.alpha[i];
  const auto v = forward_solve(state.factor, n, ks);
  double vv = 0.0;
  for (double e : v) vv += e * e;
  p.variance = std::max(0.0, se_kernel(x, x, state.hyper) - vv);
  return p;
}

double expected_improvement(double mean, double variance, double best_so_far) {
  const double sigma = std::sqrt(std::max(variance, 0.0));
  const double gain = mean - best_so_far;
  if (sigma <= 0.0) return std::max(gain, 0.0);
  const double z = gain / sigma;
  const double cdf = 0.5 * std::erfc(-z / std::numbers::sqrt2);
  const double pdf = std::exp(-0.5 * z * z) / std::sqrt(2 * std::numbers::pi);
  return std::max(0.0, gain * cdf + sigma * pdf);
}

Point maximize_acquisition(const GpState& state, const SearchSpace& space, std::uint64_t seed) {
  space.validate();
  const std::size_t dims = space.size();
  double best_y = kNegInf;
  for (const auto& o : state.observations) best_y = std::max(best_y, o.y);

  auto acquisition = [&](const Point& u) {
    const auto post = gp_posterior(state, space.snap(u));
    return expected_improvement(post.mean, post.variance, best_y);
  };

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  Point shift(dims);
  for (auto& s : shift) s = unit(rng);
  std::vector<unsigned> primes(dims);
  for (std::size_t d = 0; d < dims; ++d) primes[d] = nth_prime(d);

  struct Scored {
    Point u;
    double value;
    double variance;
  };
  std::vector<Scored> candidates;
  candidates.reserve(kCandidateCount);
  for (std::size_t i = 0; i < kCandidateCount; ++i) {
    Point u(dims);
    for (std::size_t d = 0; d < dims; ++d) {
      const double h = radical_inverse(i + 1, primes[d]) + shift[d];
      u[d] = h - std::floor(h);
    }
    const auto snapped = space.snap(u);
    const auto post = gp_posterior(state, snapped);
    candidates.push_back({u, expected_improvement(post.mean, post.variance, best_y), post.variance});
  }
  std::stable_sort(candidates.begin(), candidates.end(),
                   [](const Scored& a, const Scored& b) { return a.value > b.value; });

  if (!(candidates.front().value > 0.0)) {
    // No expected gain anywhere: explore where the surrogate is least certain.
    const auto it = std::max_element(candidates.begin(), candidates.end(),
                                     [](const Scored& a, const Scored& b) { return a.variance < b.variance; });
    return space.snap(it->u);
  }

  constexpr std::size_t kRefined = 4;
  Point best_u = candidates.front().u;
  double best_value = candidates.front().value;
  for (std::size_t c = 0; c < std::min(kRefined, candidates.size()); ++c) {
    Point u = candidates[c].u;
    double value = candidates[c].value;
    for (double step = 0.05; step > 1e-7;) {
      bool improved = false;
      for (std::size_t d = 0; d < dims; ++d) {
        for (double sign : {-1.0, 1.0}) {
          Point trial = u;
          trial[d] = std::clamp(u[d] + sign * step, 0.0, 1.0);
          const double v = acquisition(trial);
          if (v > value) {
            value = v;
            u = std::move(trial);
            improved = true;
          }
        }
      }
      if (!improved) step /= 2;
    }
    if (value > best_value) {
      best_value = value;
      best_u = u;
    }
  }
  return space.snap(best_u);
}

Point propose_next(const GpState& state, const SearchSpace& space, std::uint64_t seed) {
  return space.denormalize(maximize_acquisition(state, space, seed));
}

BoResult bo_loop(const Objective& objective, const SearchSpace& space, std::size_t n0, std::size_t n,
                 std::uint64_t seed, const GpHyperparams& hyper,
                 const std::function<void(const BoRecord&)>& on_record) {
  space.validate();
  if (n0 < 1 || n < n0) throw std::invalid_argument("bo_loop needs N >= n0 >= 1");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  BoResult result;
  result.best_y = kNegInf;
  std::vector<Observation> observed;

  for (std::size_t iter = 0; iter < n; ++iter) {
    Point u(space.size());
    if (iter < n0 || observed.empty()) {
      for (auto& v : u) v = unit(rng);
      u = space.snap(u);
    } else {
      double mean = 0.0;
      for (const auto& o : observed) mean += o.y;
      mean /= static_cast<double>(observed.size());
      double var = 0.0;
      for (const auto& o : observed) var += (o.y - mean) * (o.y - mean);
      const double sd = observed.size() > 1 ? std::sqrt(var / static_cast<double>(observed.size() - 1)) : 0.0;
      const double scale = sd > 0 ? sd : 1.0;
      std::vector<Observation> standardized = observed;
      for (auto& o : standardized) o.y = (o.y - mean) / scale;
      u = maximize_acquisition(gp_fit(standardized, hyper), space, derive_seed(seed, iter));
    }

    BoRecord record;
    record.iteration = iter + 1;
    record.x = space.denormalize(u);
    const auto start = std::chrono::steady_clock::now();
    try {
      const double y = objective(record.x);
      if (!std::isfinite(y)) throw NumericError("objective returned a non-finite value");
      record.y = y;
    } catch (const std::exception& e) {
      record.error = e.what();
    }
    record.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (record.y) {
      observed.push_back({u, *record.y});
      if (*record.y > result.best_y) {
        result.best_y = *record.y;
        result.best_x = record.x;
      }
    }
    record.best_so_far = result.best_y;
    if (on_record) on_record(record);
    result.history.push_back(std::move(record));
  }
  return result;
}

std::string tuning_log_csv(const SearchSpace& space, const BoResult& result, bool include_timing) {
  std::string out = "iteration,candidate,accuracy,best_so_far,seconds\n";
  char buf[64];
  for (const auto& r : result.history) {
    out += std::to_string(r.iteration) + "," + space.format(r.x) + ",";
    if (r.y) {
      std::snprintf(buf, sizeof buf, "%.6f", *r.y);
      out += buf;
    }
    out += ",";
    if (std::isfinite(r.best_so_far)) {
      std::snprintf(buf, sizeof buf, "%.6f", r.best_so_far);
      out += buf;
    }
    out += ",";
    if (include_timing) {
      std::snprintf(buf, sizeof buf, "%.3f", r.seconds);
      out += buf;
    }
    out += "\n";
  }
  return out;
}

ModelConfig apply_candidate(const ModelConfig& base, const SearchSpace& space, const Point& x) {
  if (x.size() != space.size()) throw std::invalid_argument("candidate dimension does not match the search space");
  ModelConfig config = base;
  for (std::size_t d = 0; d < x.size(); ++d) {
    if (space.dims[d].name == "blocks") {
      const auto count = static_cast<std::size_t>(std::llround(std::max(0.0, x[d])));
      config.attention_blocks.resize(count);
    }
  }
  auto set_filters = [](AttentionBlockConfig& block, double value) {
    const auto f = static_cast<std::size_t>(std::llround(value));
    if (f == 0) throw std::invalid_argument("attention filters must be positive");
    block.filters = f;
    block.key_depth = block.value_depth = round_up(f, std::max<std::size_t>(block.heads, 1));
  };
  for (std::size_t d = 0; d < x.size(); ++d) {
    const auto& name = space.dims[d].name;
    if (name == "blocks") continue;
    if (name == "filters") {
      for (auto& block : config.attention_blocks) set_filters(block, x[d]);
    } else if (starts_with(name, "filters_")) {
      const std::string index_text = name.substr(8);
      std::size_t pos = 0;
      unsigned long index = 0;
      try {
        index = std::stoul(index_text, &pos);
      } catch (const std::exception&) {
        pos = 0;
      }
      if (pos != index_text.size() || index == 0) throw std::invalid_argument("bad dimension name '" + name + "'");
      if (index <= config.attention_blocks.size()) set_filters(config.attention_blocks[index - 1], x[d]);
    } else {
      throw std::invalid_argument("unknown tuning dimension '" + name + "' (expected blocks, filters or filters_<i>)");
    }
  }
  config.validate();
  return config;
}

TuneResult tune_attention_filters(const Dataset& data, const ModelConfig& base, const CrossValidationOptions& cv,
                                  const SearchSpace& space, const TuneOptions& options,
                                  const std::function<void(const BoRecord&)>& on_evaluation) {
  space.validate();
  const std::size_t n0 = std::min(options.budget, options.initial ? options.initial : default_initial_points(space));
  auto objective = [&](const Point& x) {
    const auto config = apply_candidate(base, space, x);
    const auto result = cross_validate(data, config, cv);
    if (options.use_test_accuracy) return result.report.accuracy.mean;
    double sum = 0.0;
    for (const auto& f : result.report.folds) sum += f.training.best_val_accuracy;
    return sum / static_cast<double>(result.report.folds.size());
  };
  TuneResult out;
  out.search = bo_loop(objective, space, n0, options.budget, options.seed, {}, on_evaluation);
  if (!out.search.best_x) throw NumericError("every tuning candidate failed; see the tuning log");
  out.best_config = apply_candidate(base, space, *out.search.best_x);
  out.best_accuracy = out.search.best_y;
  return out;
}

}  // namespace adsnn::bo
