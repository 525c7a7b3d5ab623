#include <doctest.h>

#include <cmath>
#include <memory>

#include "adsnn/feature_viz.hpp"
#include "adsnn/synthetic.hpp"

using namespace adsnn;
using namespace adsnn::viz;

namespace {

// One linear 3x3 convolution, no normalisation or activation.
Model linear_conv(std::size_t size, std::size_t filters, float weight, std::optional<std::size_t> zero_filter = {}) {
  Tensor<float> kernel({3, 3, 3, filters});
  auto k = kernel.mutable_data();
  for (std::size_t i = 0; i < k.size(); ++i) {
    const std::size_t f = i % filters;
    k[i] = zero_filter && *zero_filter == f ? 0.0f : weight * static_cast<float>(1 + (i % 5));
  }
  std::vector<std::unique_ptr<Layer>> layers;
  layers.push_back(std::make_unique<ConvLayer>(kernel, 1, false, false));
  return Model({size, size, 3}, std::move(layers));
}

Tensor<float> sample_input(std::size_t size) { return image_to_tensor(synth::shape_sample(1, size, 9)); }

}  // namespace

TEST_CASE("activation grid shape follows the layer") {
  ModelConfig cfg = ModelConfig::desk_scale();
  Model model = build_adsnn(cfg);
  const auto grid = activation_maps(model, sample_input(64), 0);
  CHECK(grid.channels == scaled_channels(32, cfg.width_multiplier));
  CHECK(grid.maps.size() == grid.channels);
  CHECK(grid.blank.size() == grid.channels);
  CHECK(grid.maps[0].height == 32);
  CHECK(grid.maps[0].channels == 1);
  CHECK(layer_channels(model, 0) == grid.channels);
  CHECK_THROWS_AS(activation_maps(model, sample_input(64), model.size()), std::out_of_range);
}

TEST_CASE("zero-weight layers give blank maps") {
  Model model = linear_conv(16, 4, 0.0f);
  const auto grid = activation_maps(model, sample_input(16), 0);
  CHECK(grid.maps.size() == 4);
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(grid.blank[i]);
    for (auto p : grid.maps[i].pixels) CHECK(p == 128);
  }
}

TEST_CASE("activation maps are deterministic and span the full range") {
  Model model = linear_conv(16, 3, 0.1f);
  const auto a = activation_maps(model, sample_input(16), 0);
  const auto b = activation_maps(model, sample_input(16), 0);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(a.maps[i] == b.maps[i]);
    CHECK_FALSE(a.blank[i]);
    const auto [lo, hi] = std::minmax_element(a.maps[i].pixels.begin(), a.maps[i].pixels.end());
    CHECK(*lo == 0);
    CHECK(*hi == 255);
  }
}

TEST_CASE("loss trace rises strictly on a linear positive-kernel layer") {
  Model model = linear_conv(24, 2, 0.5f);
  VizConfig cfg;
  cfg.seed = 12;
  const auto v = filter_visualization(model, 0, 1, cfg);
  REQUIRE(v.loss_trace.size() == 30);
  CHECK_FALSE(v.zero_gradient);
  CHECK(v.loss_trace[0] > v.initial_loss);
  for (std::size_t i = 1; i < v.loss_trace.size(); ++i) CHECK(v.loss_trace[i] > v.loss_trace[i - 1]);
  // The gradient of a linear layer is constant, so every step gains the same amount.
  const double first_gain = v.loss_trace[0] - v.initial_loss;
  for (std::size_t i = 1; i < v.loss_trace.size(); ++i) {
    CHECK(v.loss_trace[i] - v.loss_trace[i - 1] == doctest::Approx(first_gain).epsilon(1e-3));
  }
  for (double n : v.step_norms) CHECK(std::abs(n - 1.0) <= 1e-4);
  CHECK(v.image.height == 24);
  CHECK(v.image.width == 24);
  CHECK(v.image.channels == 3);
}

TEST_CASE("zero-weight filter returns the initialization") {
  Model model = linear_conv(16, 3, 0.05f, 2);
  VizConfig cfg;
  cfg.seed = 4;
  const auto v = filter_visualization(model, 0, 2, cfg);
  CHECK(v.zero_gradient);
  CHECK(v.image == v.initial);
  CHECK(v.loss_trace == std::vector<double>(30, 0.0));
  const auto init = initial_input(16, 16, 4);
  for (std::size_t i = 0; i < init.size(); ++i) {
    CHECK(v.initial.pixels[i] == static_cast<std::uint8_t>(std::lround(init[i])));
    CHECK(std::abs(init[i] - 128.0f) <= 12.7f);
  }
}

TEST_CASE("fixed seeds give bit-identical visualizations") {
  Model model = build_adsnn(ModelConfig::desk_scale());
  VizConfig cfg;
  cfg.steps = 3;
  cfg.seed = 99;
  const auto a = filter_visualization(model, 2, 5, cfg);
  const auto b = filter_visualization(model, 2, 5, cfg);
  CHECK(a.image == b.image);
  CHECK(a.loss_trace == b.loss_trace);
  cfg.seed = 100;
  CHECK_FALSE(filter_visualization(model, 2, 5, cfg).image == a.image);
}

TEST_CASE("visualization input size and bad indices") {
  Model model = linear_conv(16, 2, 0.05f);
  VizConfig cfg;
  cfg.steps = 2;
  cfg.input_size = 16;
  CHECK(filter_visualization(model, 0, 0, cfg).image.height == 16);
  cfg.input_size = 20;
  CHECK_THROWS_AS(filter_visualization(model, 0, 0, cfg), DimensionError);
  cfg.input_size = 0;
  CHECK_THROWS_AS(filter_visualization(model, 0, 2, cfg), std::out_of_range);
  CHECK_THROWS_AS(filter_visualization(model, 1, 0, cfg), std::out_of_range);
}

TEST_CASE("grid layout arithmetic") {
  std::vector<Image> tiles(8, Image(5, 7, 1, 0));
  const Image row = export_grid(tiles, 8);
  CHECK(row.width == 8 * (7 + 2) + 2);
  CHECK(row.height == 1 * (5 + 2) + 2);
  const Image block = export_grid(tiles, 3);
  CHECK(block.width == 3 * 9 + 2);
  CHECK(block.height == 3 * 7 + 2);
  CHECK(block.at(0, 0) == 255);
  CHECK(block.at(2, 2) == 0);
  CHECK(block.at(2, 9) == 255);
  CHECK(block.at(2, 11) == 0);
  CHECK_THROWS_AS(export_grid({}, 4), std::invalid_argument);
  CHECK_THROWS_AS(export_grid(tiles, 0), std::invalid_argument);
  tiles.push_back(Image(5, 7, 3, 10));
  CHECK(export_grid(tiles, 4).channels == 3);
  tiles.push_back(Image(6, 7, 1));
  CHECK_THROWS_AS(export_grid(tiles, 4), DimensionError);
}
