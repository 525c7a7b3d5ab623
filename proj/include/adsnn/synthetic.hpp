#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "adsnn/image.hpp"
#include "adsnn/train_eval.hpp"

namespace adsnn::synth {

using Rgb = std::array<std::uint8_t, 3>;

/// Filled ellipse on a flat background; angle measured from the +x (column)
/// axis towards +y (down the rows).
struct EllipseSpec {
  std::size_t height = 300;
  std::size_t width = 400;
  double centre_row = 150.0;
  double centre_col = 200.0;
  double semi_major = 120.0;
  double semi_minor = 45.0;
  double angle_degrees = 0.0;
  Rgb color{46, 139, 60};
  Rgb background{255, 255, 255};
};

// Anti-aliased with 4x4 supersampling.
Image ellipse_image(const EllipseSpec& spec);

// Sets `count` random pixels to `color`.
void add_speckle(Image& image, std::size_t count, std::uint64_t seed, Rgb color = {20, 20, 20});

// brownspot, healthy, hispa, leafblast
const std::vector<std::string>& shape_class_names();

// One size x size RGB sample of a colored-shape class; position, scale,
// rotation, colour and background noise vary with `seed`.
Image shape_sample(int label, std::size_t size, std::uint64_t seed);

Dataset make_shape_dataset(std::size_t per_class, std::size_t size, std::uint64_t seed);

// Writes <root>/<class>/<class>_NNN.png; returns the number of files written.
std::size_t write_shape_dataset(const std::filesystem::path& root, std::size_t per_class, std::size_t size,
                                std::uint64_t seed);

}  // namespace adsnn::synth
