#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "adsnn/image.hpp"
#include "adsnn/model.hpp"

namespace adsnn::viz {

struct ActivationGrid {
  std::size_t layer = 0;
  std::size_t channels = 0;
  std::vector<Image> maps;   // one 8-bit single-channel map per channel
  std::vector<bool> blank;   // constant channel, rendered mid-gray
};

/// Eval-mode forward of one HxWx3 (or 1xHxWx3) input to `layer` (index into
/// the model's layer list); each channel is min-max scaled to [0, 255] on its own.
ActivationGrid activation_maps(Model& model, const Tensor<float>& image, std::size_t layer);

struct VizConfig {
  std::size_t steps = 30;
  double step_size = 1.0;
  std::uint64_t seed = 0;
  std::size_t input_size = 0;  // 0 = the model's input size
  double epsilon = 1e-5;
};

struct Visualization {
  Image image;
  Image initial;                       // the seeded starting image
  double initial_loss = 0.0;
  std::vector<double> loss_trace;      // loss after each step
  std::vector<double> step_norms;      // L2 norm of each normalized gradient
  bool zero_gradient = false;
};

// Mid-gray (128) plus uniform noise in [-12.7, 12.7], HxWx3 pixel values.
Tensor<float> initial_input(std::size_t height, std::size_t width, std::uint64_t seed);

/// Gradient ascent in input space on the spatial mean of channel `filter` at
/// `layer`; each step adds step_size * g / (||g|| + epsilon). The result is
/// deprocessed (standardize, * 0.1, + 0.5, clip to [0, 1], * 255). When the
/// first gradient is all zeros the initial image is returned unchanged with a
/// zero trace and `zero_gradient` set.
Visualization filter_visualization(Model& model, std::size_t layer, std::size_t filter, const VizConfig& config);

// Channel count of layer `layer`'s output.
std::size_t layer_channels(const Model& model, std::size_t layer);

/// Row-major mosaic on a white background with 2-pixel separators:
/// columns * (w + 2) + 2 wide, rows * (h + 2) + 2 high. All images must share
/// their size; grayscale tiles are expanded when any tile is RGB.
Image export_grid(const std::vector<Image>& images, std::size_t columns);
void export_grid(const std::vector<Image>& images, std::size_t columns, const std::filesystem::path& path);

}  // namespace adsnn::viz
