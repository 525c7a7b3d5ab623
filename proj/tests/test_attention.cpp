#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include <Eigen/Dense>

#include "adsnn/attention.hpp"
#include "adsnn/conv_layers.hpp"
#include "support/gradcheck.hpp"

using namespace adsnn;
using namespace adsnn::attn;
using adsnn::testing::gradcheck;
using adsnn::testing::Inputs;
using adsnn::testing::random_tensor;
using adsnn::testing::weighted_sum;

namespace {

Tensor<double> identity(std::size_t n) {
  Tensor<double> t(Shape{n, n}, 0.0);
  for (std::size_t i = 0; i < n; ++i) t.mutable_data()[i * n + i] = 1.0;
  return t;
}

AttentionWeights<double> random_weights(std::size_t f_in, const AttentionConfig& cfg, std::mt19937_64& rng) {
  AttentionWeights<double> w;
  for (std::size_t h = 0; h < cfg.heads; ++h) {
    w.heads.push_back({random_tensor({f_in, cfg.key_depth_per_head()}, rng),
                       random_tensor({f_in, cfg.key_depth_per_head()}, rng),
                       random_tensor({f_in, cfg.value_depth_per_head()}, rng)});
  }
  w.output = random_tensor({cfg.value_depth, cfg.value_depth}, rng);
  return w;
}

Eigen::MatrixXd to_eigen(const Tensor<double>& t) {
  Eigen::MatrixXd m(t.dim(0), t.dim(1));
  for (std::size_t r = 0; r < t.dim(0); ++r)
    for (std::size_t c = 0; c < t.dim(1); ++c) m(r, c) = t[r * t.dim(1) + c];
  return m;
}

// Dense-matrix evaluation of multi-head attention on a flattened input.
Eigen::MatrixXd reference_mha(const Eigen::MatrixXd& x, const AttentionWeights<double>& w, const AttentionConfig& cfg) {
  Eigen::MatrixXd joined(x.rows(), cfg.value_depth);
  const double s = 1.0 / std::sqrt(static_cast<double>(cfg.key_depth_per_head()));
  for (std::size_t h = 0; h < cfg.heads; ++h) {
    Eigen::MatrixXd logits = (x * to_eigen(w.heads[h].query)) * (x * to_eigen(w.heads[h].key)).transpose() * s;
    for (Eigen::Index r = 0; r < logits.rows(); ++r) {
      logits.row(r).array() -= logits.row(r).maxCoeff();
      logits.row(r) = logits.row(r).array().exp().matrix();
      logits.row(r) /= logits.row(r).sum();
    }
    joined.middleCols(static_cast<Eigen::Index>(h * cfg.value_depth_per_head()),
                      static_cast<Eigen::Index>(cfg.value_depth_per_head())) = logits * (x * to_eigen(w.heads[h].value));
  }
  return joined * to_eigen(w.output);
}

}  // namespace

TEST_CASE("flatten_spatial ordering and round trip") {
  auto one = flatten_spatial(Tensor<double>(Shape{1, 1, 3}, {4, 5, 6}));
  CHECK(one.shape() == Shape{1, 3});
  CHECK(one[2] == 6.0);

  auto grid = flatten_spatial(Tensor<double>(Shape{2, 2, 1}, {1, 2, 3, 4}));
  CHECK(grid.shape() == Shape{4, 1});
  for (std::size_t i = 0; i < 4; ++i) CHECK(grid[i] == static_cast<double>(i + 1));

  std::mt19937_64 rng(31);
  auto x = random_tensor({3, 5, 2}, rng);
  auto back = unflatten_spatial(flatten_spatial(x), 3, 5);
  CHECK(back.shape() == x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) CHECK(back[i] == x[i]);

  CHECK_THROWS_AS(flatten_spatial(Tensor<double>(Shape{4, 2})), DimensionError);
  CHECK_THROWS_AS(unflatten_spatial(Tensor<double>(Shape{6, 2}), 2, 2), DimensionError);
}

TEST_CASE("single head attention examples") {
  std::mt19937_64 rng(32);
  HeadWeights<double> head{random_tensor({3, 2}, rng), random_tensor({3, 2}, rng), random_tensor({3, 4}, rng)};
  auto x1 = random_tensor({1, 3}, rng);
  auto w1 = attention_weights(x1, head, 2);
  CHECK(w1.item() == 1.0);
  auto o1 = single_head_attention(x1, head, 2);
  auto xv = matmul(x1, head.value);
  for (std::size_t i = 0; i < 4; ++i) CHECK(o1[i] == doctest::Approx(xv[i]).epsilon(1e-14));

  Tensor<double> dup(Shape{3, 3}, {0.2, -0.4, 0.9, 0.2, -0.4, 0.9, 1.0, 0.5, -0.3});
  auto od = single_head_attention(dup, head, 2);
  for (std::size_t c = 0; c < 4; ++c) CHECK(od[c] == doctest::Approx(od[4 + c]).epsilon(1e-14));

  HeadWeights<double> eye{identity(2), identity(2), identity(2)};
  auto out = single_head_attention(identity(2), eye, 1);
  const double e = std::exp(1.0);
  CHECK(out[0] == doctest::Approx(e / (e + 1)).epsilon(1e-12));
  CHECK(out[1] == doctest::Approx(1 / (e + 1)).epsilon(1e-12));
  CHECK(out[0] == doctest::Approx(0.7311).epsilon(1e-4));
  CHECK(out[1] == doctest::Approx(0.2689).epsilon(1e-4));

  CHECK_THROWS_AS(single_head_attention(identity(2), eye, 0), std::invalid_argument);
}

TEST_CASE("attention weights are row-stochastic and outputs are convex combinations") {
  std::mt19937_64 rng(33);
  for (int trial = 0; trial < 10; ++trial) {
    const std::size_t n = 2 + trial % 5, f = 1 + trial % 3;
    HeadWeights<double> head{random_tensor({f, 2}, rng), random_tensor({f, 2}, rng), random_tensor({f, 1}, rng)};
    const double factor = trial % 2 ? 25.0 : 0.5;
    auto x = scale(random_tensor({n, f}, rng), factor);
    auto w = attention_weights(x, head, 2);
    for (std::size_t r = 0; r < n; ++r) {
      double total = 0;
      for (std::size_t c = 0; c < n; ++c) {
        CHECK(w[r * n + c] >= 0.0);
        total += w[r * n + c];
      }
      CHECK(std::abs(total - 1.0) < 1e-6);
    }
    auto values = matmul(x, head.value);
    const auto [lo, hi] = std::minmax_element(values.data().begin(), values.data().end());
    const auto out = single_head_attention(x, head, 2);
    for (double v : out.data()) {
      CHECK(v >= *lo - 1e-9);
      CHECK(v <= *hi + 1e-9);
    }
  }
}

TEST_CASE("multi head attention matches a dense reference") {
  std::mt19937_64 rng(34);
  for (std::size_t heads : {1, 2, 4}) {
    AttentionConfig cfg{heads, 2 * heads, 3 * heads};
    auto w = random_weights(5, cfg, rng);
    auto x = random_tensor({3, 2, 5}, rng);
    auto out = multi_head_attention(x, w, cfg);
    CHECK(out.shape() == Shape{3, 2, cfg.value_depth});
    const Eigen::MatrixXd ref = reference_mha(to_eigen(flatten_spatial(x)), w, cfg);
    for (std::size_t r = 0; r < 6; ++r)
      for (std::size_t c = 0; c < cfg.value_depth; ++c)
        CHECK(out[r * cfg.value_depth + c] == doctest::Approx(ref(r, c)).epsilon(1e-10));
  }
}

TEST_CASE("one head with identity projection equals single head attention") {
  std::mt19937_64 rng(35);
  AttentionConfig cfg{1, 3, 4};
  auto w = random_weights(2, cfg, rng);
  w.output = identity(4);
  auto x = random_tensor({2, 3, 2}, rng);
  auto multi = multi_head_attention(x, w, cfg);
  auto single = unflatten_spatial(single_head_attention(flatten_spatial(x), w.heads[0], 3), 2, 3);
  REQUIRE(multi.shape() == single.shape());
  for (std::size_t i = 0; i < multi.size(); ++i) CHECK(multi[i] == doctest::Approx(single[i]).epsilon(1e-14));
}

TEST_CASE("multi head attention is permutation equivariant") {
  std::mt19937_64 rng(36);
  AttentionConfig cfg{2, 4, 4};
  for (int trial = 0; trial < 10; ++trial) {
    const std::size_t f = 3;
    auto w = random_weights(f, cfg, rng);
    auto x = random_tensor({2, 2, f}, rng);
    std::vector<std::size_t> perm(4);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    Tensor<double> px(x.shape());
    for (std::size_t p = 0; p < 4; ++p)
      for (std::size_t c = 0; c < f; ++c) px.mutable_data()[p * f + c] = x[perm[p] * f + c];
    auto y = multi_head_attention(x, w, cfg);
    auto py = multi_head_attention(px, w, cfg);
    for (std::size_t p = 0; p < 4; ++p)
      for (std::size_t c = 0; c < 4; ++c) CHECK(std::abs(py[p * 4 + c] - y[perm[p] * 4 + c]) < 1e-6);
  }
}

TEST_CASE("multi head attention validates its configuration") {
  std::mt19937_64 rng(37);
  AttentionConfig bad{3, 4, 6};
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  AttentionConfig cfg{2, 4, 4};
  auto w = random_weights(3, cfg, rng);
  CHECK_THROWS_AS(multi_head_attention(random_tensor({2, 2, 3}, rng), w, bad), std::invalid_argument);
  CHECK_THROWS_AS(multi_head_attention(random_tensor({4, 3}, rng), w, cfg), DimensionError);
}

TEST_CASE("default attention config") {
  auto c = default_attention_config(256);
  CHECK(c.heads == 4);
  CHECK(c.key_depth == 64);
  CHECK(c.value_depth == 64);
  CHECK(default_attention_config(10).value_depth == 4);
  CHECK(default_attention_config(20).value_depth == 8);
  CHECK(default_attention_config(1).value_depth == 4);
}

TEST_CASE("attention augmented convolution") {
  std::mt19937_64 rng(38);
  auto x = random_tensor({4, 4, 3}, rng);
  auto kernel = random_tensor({3, 3, 3, 5}, rng);

  AttentionConfig off{4, 0, 0};
  auto pure = attention_augmented_conv(x, kernel, AttentionWeights<double>{}, off);
  auto conv = conv2d(x, kernel, 1, Padding::Same);
  REQUIRE(pure.shape() == conv.shape());
  for (std::size_t i = 0; i < conv.size(); ++i) CHECK(pure[i] == conv[i]);

  for (int trial = 0; trial < 5; ++trial) {
    const std::size_t heads = 1 + static_cast<std::size_t>(trial % 2);
    AttentionConfig cfg{heads, 2 * heads, heads * static_cast<std::size_t>(1 + trial)};
    auto w = random_weights(3, cfg, rng);
    auto y = attention_augmented_conv(x, kernel, w, cfg);
    CHECK(y.shape() == Shape{4, 4, 5 + cfg.value_depth});
    for (std::size_t p = 0; p < 16; ++p)
      for (std::size_t c = 0; c < 5; ++c) CHECK(y[p * y.dim(2) + c] == conv[p * 5 + c]);

    for (auto& h : w.heads) h.value = Tensor<double>(h.value.shape(), 0.0);
    auto z = attention_augmented_conv(x, kernel, w, cfg);
    for (std::size_t p = 0; p < 16; ++p)
      for (std::size_t c = 5; c < z.dim(2); ++c) CHECK(z[p * z.dim(2) + c] == 0.0);
  }
}

TEST_CASE("attention augmented convolution gradient matches finite differences") {
  std::mt19937_64 rng(39);
  AttentionConfig cfg{2, 4, 4};
  auto fn = [cfg](const Inputs& in) {
    AttentionWeights<double> w;
    w.heads.push_back({in[2], in[3], in[4]});
    w.heads.push_back({in[5], in[6], in[7]});
    w.output = in[8];
    return weighted_sum(attention_augmented_conv(in[0], in[1], w, cfg));
  };
  const double err = gradcheck(fn, {random_tensor({2, 3, 3, 3}, rng), random_tensor({3, 3, 3, 2}, rng),
                                    random_tensor({3, 2}, rng), random_tensor({3, 2}, rng), random_tensor({3, 2}, rng),
                                    random_tensor({3, 2}, rng), random_tensor({3, 2}, rng), random_tensor({3, 2}, rng),
                                    random_tensor({4, 4}, rng)});
  CHECK(err < 1e-4);
}

TEST_CASE("attention memory estimate") {
  CHECK(attention_memory_estimate(7, 7, 4) == 9'604);
  CHECK(attention_memory_estimate(1, 1, 6) == 6);
  for (std::int64_t s : {1, 2, 5, 14}) CHECK(attention_memory_estimate(2 * s, 2 * s, 4) == 16 * attention_memory_estimate(s, s, 4));
  CHECK_THROWS_AS(attention_memory_estimate(1 << 20, 1 << 20, 4), OverflowError);
  CHECK_THROWS_AS(attention_memory_estimate(0, 1, 1), std::invalid_argument);
}
