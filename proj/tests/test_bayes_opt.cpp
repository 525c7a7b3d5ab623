#include <doctest.h>

#include <cmath>
#include <random>

#include <Eigen/Dense>

#include "adsnn/bayes_opt.hpp"
#include "adsnn/synthetic.hpp"

using namespace adsnn;
using namespace adsnn::bo;

namespace {

std::vector<Observation> random_observations(std::mt19937_64& rng, std::size_t n, std::size_t dims) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<Observation> obs(n);
  for (auto& o : obs) {
    o.x.resize(dims);
    for (auto& v : o.x) v = u(rng);
    o.y = 2 * u(rng) - 1;
  }
  return obs;
}

// Dense solve of the GP conditional with Eigen.
Posterior oracle(const GpState& s, const Point& x) {
  const auto n = static_cast<Eigen::Index>(s.size());
  Eigen::MatrixXd k(n, n);
  Eigen::VectorXd ks(n), y(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto ui = static_cast<std::size_t>(i);
    for (Eigen::Index j = 0; j < n; ++j) k(i, j) = se_kernel(s.observations[ui].x, s.observations[static_cast<std::size_t>(j)].x, s.hyper);
    k(i, i) += s.jitter;
    ks(i) = se_kernel(s.observations[ui].x, x, s.hyper);
    y(i) = s.observations[ui].y;
  }
  const Eigen::FullPivLU<Eigen::MatrixXd> lu(k);
  return {ks.dot(lu.solve(y)), se_kernel(x, x, s.hyper) - ks.dot(lu.solve(ks))};
}

SearchSpace line(double lo, double hi) { return {{{"x", lo, hi, DimKind::Continuous}}}; }

}  // namespace

TEST_CASE("one observation factor") {
  const auto s = gp_fit({{{0.3}, 1.5}});
  REQUIRE(s.size() == 1);
  CHECK(s.factor_at(0, 0) == doctest::Approx(std::sqrt(1.0 + 1e-10)));
}

TEST_CASE("duplicate points are merged by averaging") {
  const auto s = gp_fit({{{0.4}, 1.0}, {{0.4}, 3.0}, {{0.9}, 0.0}});
  REQUIRE(s.size() == 2);
  CHECK(s.observations[0].y == 2.0);
}

TEST_CASE("factor reconstructs the kernel matrix") {
  std::mt19937_64 rng(1);
  const auto s = gp_fit(random_observations(rng, 5, 3));
  for (std::size_t i = 0; i < 5; ++i) {
    for (std::size_t j = 0; j < 5; ++j) {
      double llt = 0.0;
      for (std::size_t k = 0; k < 5; ++k) llt += s.factor_at(i, k) * s.factor_at(j, k);
      const double direct = se_kernel(s.observations[i].x, s.observations[j].x, s.hyper) + (i == j ? s.jitter : 0.0);
      CHECK(std::abs(llt - direct) < 1e-10);
    }
  }
}

TEST_CASE("jitter escalates for near-singular kernels") {
  std::vector<Observation> obs;
  for (int i = 0; i < 12; ++i) obs.push_back({{0.5 + 1e-9 * i}, std::sin(i)});
  GpHyperparams loud;
  loud.signal_variance = 1e8;
  const auto s = gp_fit(obs, loud);
  CHECK(s.jitter > 1e-10);
  CHECK(s.jitter <= 1e-6 * (1 + 1e-9));
  GpHyperparams none = loud;
  none.max_jitter = 0.0;
  none.jitter = 0.0;
  CHECK_THROWS_AS(gp_fit(obs, none), NumericError);
  CHECK_THROWS_AS(gp_fit({}), std::invalid_argument);
}

TEST_CASE("posterior interpolates and matches the dense oracle") {
  std::mt19937_64 rng(2);
  for (std::size_t n : {1u, 3u, 8u, 20u}) {
    const auto s = gp_fit(random_observations(rng, n, 2));
    for (const auto& o : s.observations) {
      const auto p = gp_posterior(s, o.x);
      CHECK(std::abs(p.mean - o.y) < 1e-6);
      CHECK(p.variance <= 10 * s.jitter);
    }
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int t = 0; t < 10; ++t) {
      const Point x{u(rng), u(rng)};
      const auto p = gp_posterior(s, x);
      const auto q = oracle(s, x);
      CHECK(std::abs(p.mean - q.mean) < 1e-8);
      CHECK(std::abs(p.variance - std::max(0.0, q.variance)) < 1e-8);
    }
  }
}

TEST_CASE("prior and symmetric midpoint") {
  GpState empty;
  const auto prior = gp_posterior(empty, {0.5});
  CHECK(prior.mean == 0.0);
  CHECK(prior.variance == 1.0);

  GpHyperparams h;
  h.length_scales = {1.0};
  const auto s = gp_fit({{{-1.0}, 0.7}, {{1.0}, 0.7}}, h);
  const auto mid = gp_posterior(s, {0.0});
  const double k = std::exp(-0.5), k2 = std::exp(-2.0);
  CHECK(mid.mean == doctest::Approx(0.7 * 2 * k / (1 + 1e-10 + k2)).epsilon(1e-12));
  CHECK(std::abs(mid.mean - oracle(s, {0.0}).mean) < 1e-8);
}

TEST_CASE("variance is smallest at observations") {
  const auto s = gp_fit({{{0.1}, 0.0}, {{0.2}, 1.0}});
  CHECK(gp_posterior(s, {0.1}).variance <= gp_posterior(s, {1.0}).variance);
}

TEST_CASE("expected improvement closed form") {
  CHECK(expected_improvement(1.0, 0.0, 1.0) == 0.0);
  CHECK(expected_improvement(1.5, 0.0, 1.0) == 0.5);
  CHECK(expected_improvement(0.5, 0.0, 1.0) == 0.0);
  CHECK(expected_improvement(2.0, 1.0, 2.0) == doctest::Approx(0.3989422804).epsilon(1e-9));
  double prev = 1.0;
  for (double var : {1.0, 1e-2, 1e-4, 1e-8}) {
    const double ei = expected_improvement(0.9, var, 1.0);
    CHECK(ei >= 0.0);
    CHECK(ei <= prev);
    prev = ei;
  }
  CHECK(prev < 1e-12);
}

TEST_CASE("proposals stay in bounds and are integral") {
  const SearchSpace space{{{"a", 8, 64, DimKind::Integer}, {"b", -2.5, 3.0, DimKind::Continuous}}};
  std::mt19937_64 rng(4);
  const auto s = gp_fit(random_observations(rng, 6, 2));
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const Point x = propose_next(s, space, seed);
    CHECK(x[0] >= 8);
    CHECK(x[0] <= 64);
    CHECK(x[0] == std::round(x[0]));
    CHECK(x[1] >= -2.5);
    CHECK(x[1] <= 3.0);
    CHECK(propose_next(s, space, seed) == x);
  }
}

TEST_CASE("a single observation is not proposed again") {
  const SearchSpace space = line(0, 100);
  const auto s = gp_fit({{{0.5}, 0.0}});
  CHECK(propose_next(s, space, 1)[0] != 50.0);
}

TEST_CASE("proposal matches the dense-grid argmax of expected improvement") {
  const SearchSpace space = line(0, 1);
  const auto s = gp_fit({{{0.1}, 0.2}, {{0.45}, 0.9}, {{0.8}, -0.3}});
  const double best_y = 0.9;
  double grid_best = -1, grid_x = 0;
  for (int i = 0; i <= 10000; ++i) {
    const double x = i / 10000.0;
    const auto p = gp_posterior(s, {x});
    const double ei = expected_improvement(p.mean, p.variance, best_y);
    if (ei > grid_best) {
      grid_best = ei;
      grid_x = x;
    }
  }
  CHECK(std::abs(propose_next(s, space, 7)[0] - grid_x) <= 1e-4);
}

TEST_CASE("loop finds the quadratic optimum") {
  int hits = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto r = bo_loop([](const Point& x) { return -(x[0] - 3) * (x[0] - 3); }, line(0, 10), 5, 20, seed);
    REQUIRE(r.best_x);
    if (std::abs((*r.best_x)[0] - 3) <= 0.1) ++hits;
    CHECK(r.history.size() == 20);
    for (std::size_t i = 1; i < r.history.size(); ++i) CHECK(r.history[i].best_so_far >= r.history[i - 1].best_so_far);
  }
  CHECK(hits >= 18);
}

TEST_CASE("loop with N == n0 is random search") {
  const auto r = bo_loop([](const Point& x) { return x[0]; }, line(0, 1), 4, 4, 3);
  double best = -1;
  for (const auto& h : r.history) best = std::max(best, *h.y);
  CHECK(r.best_y == best);
  CHECK_THROWS_AS(bo_loop([](const Point&) { return 0.0; }, line(0, 1), 5, 4, 3), std::invalid_argument);
}

TEST_CASE("objective failures are recorded and skipped") {
  int calls = 0;
  const auto r = bo_loop(
      [&](const Point& x) {
        if (++calls % 3 == 0) throw NumericError("diverged");
        return -std::abs(x[0] - 0.3);
      },
      line(0, 1), 3, 9, 2);
  CHECK(r.history.size() == 9);
  CHECK_FALSE(r.history[2].y);
  CHECK(r.history[2].error == "diverged");
  CHECK(r.best_x);
}

TEST_CASE("a single-point space returns that point") {
  const SearchSpace space{{{"filters", 16, 16, DimKind::Integer}}};
  int calls = 0;
  const auto r = bo_loop([&](const Point&) { ++calls; return 0.5; }, space, 1, 1, 0);
  CHECK(calls == 1);
  CHECK((*r.best_x)[0] == 16.0);
}

TEST_CASE("4x4 lookup table argmax found within budget 12") {
  const double table[4][4] = {{0.52, 0.61, 0.58, 0.49}, {0.66, 0.71, 0.69, 0.55},
                              {0.63, 0.74, 0.83, 0.60}, {0.57, 0.62, 0.68, 0.51}};
  const SearchSpace space{{{"a", 0, 3, DimKind::Integer}, {"b", 0, 3, DimKind::Integer}}};
  int hits = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto r = bo_loop([&](const Point& x) { return table[static_cast<int>(x[0])][static_cast<int>(x[1])]; }, space,
                           default_initial_points(space), 12, seed);
    if (r.best_y == 0.83) ++hits;
  }
  CHECK(hits >= 18);
}

TEST_CASE("search space json and formatting") {
  const auto j = nlohmann::json::parse(R"([{"name":"filters_1","lower":8,"upper":64,"kind":"integer"},
                                           {"name":"lr","lower":0.001,"upper":0.1,"kind":"continuous"}])");
  const auto s = SearchSpace::from_json(j);
  CHECK(s.size() == 2);
  CHECK(SearchSpace::from_json(s.to_json()).to_json() == s.to_json());
  CHECK(s.format({16, 0.01}) == "filters_1=16;lr=0.01");
  CHECK(s.denormalize({0.5, 1.0}) == Point{36, 0.1});
  CHECK_THROWS_AS(SearchSpace::from_json(nlohmann::json::parse(R"([{"name":"a","lower":3,"upper":1}])")),
                  std::invalid_argument);
  CHECK_THROWS_AS(SearchSpace::from_json(nlohmann::json::parse(R"([{"name":"a","lower":0,"upper":1,"kidn":"x"}])")),
                  std::invalid_argument);
}

TEST_CASE("candidates map onto attention blocks") {
  const ModelConfig base = ModelConfig::desk_scale();
  const auto space = default_filter_space(2);
  const auto cfg = apply_candidate(base, space, {10, 33});
  REQUIRE(cfg.attention_blocks.size() == 2);
  CHECK(cfg.attention_blocks[0].filters == 10);
  CHECK(cfg.attention_blocks[0].key_depth == 12);
  CHECK(cfg.attention_blocks[1].value_depth == 36);

  const SearchSpace count{{{"blocks", 0, 3, DimKind::Integer}, {"filters", 8, 32, DimKind::Integer}}};
  const auto one = apply_candidate(base, count, {1, 8});
  CHECK(one.attention_blocks.size() == 1);
  CHECK(one.attention_blocks[0].filters == 8);
  CHECK(apply_candidate(base, count, {0, 8}).attention_blocks.empty());
  const SearchSpace bad{{{"dropout", 0, 1, DimKind::Continuous}}};
  CHECK_THROWS_AS(apply_candidate(base, bad, {0.5}), std::invalid_argument);
}

TEST_CASE("tuning log has one row per evaluation") {
  const auto r = bo_loop([](const Point& x) { return x[0]; }, line(0, 1), 2, 5, 1);
  const std::string csv = tuning_log_csv(line(0, 1), r, false);
  CHECK(csv.rfind("iteration,candidate,accuracy,best_so_far,seconds\n", 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 6);
}

TEST_CASE("tuning attention filters on a toy dataset") {
  const Dataset data = synth::make_shape_dataset(4, 32, 2);
  ModelConfig base = ModelConfig::desk_scale();
  base.input_size = 32;
  CrossValidationOptions cv;
  cv.folds = 2;
  cv.train.epochs = 1;
  cv.train.batch_size = 8;
  TuneOptions opts;
  opts.budget = 3;
  opts.initial = 2;
  const auto space = default_filter_space(2);
  std::size_t seen = 0;
  const auto r = tune_attention_filters(data, base, cv, space, opts, [&](const BoRecord&) { ++seen; });
  CHECK(seen == 3);
  CHECK(r.search.history.size() == 3);
  CHECK(r.best_accuracy == r.search.best_y);
  CHECK(r.best_config == apply_candidate(base, space, *r.search.best_x));
}
