#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "adsnn/image.hpp"

namespace adsnn::leaf {

struct Mask {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint8_t> bits;  // 0 or 1

  Mask() = default;
  Mask(std::size_t h, std::size_t w, std::uint8_t fill = 0) : height(h), width(w), bits(h * w, fill) {}

  std::uint8_t& at(std::size_t row, std::size_t col) { return bits[row * width + col]; }
  std::uint8_t at(std::size_t row, std::size_t col) const { return bits[row * width + col]; }
  std::size_t count() const;

  bool operator==(const Mask&) const = default;
};

// Half-open pixel rectangle [row0, row1) x [col0, col1).
struct BBox {
  std::size_t row0 = 0, col0 = 0, row1 = 0, col1 = 0;

  std::size_t height() const { return row1 - row0; }
  std::size_t width() const { return col1 - col0; }
  bool operator==(const BBox&) const = default;
};

class NoForegroundError : public DataError {
 public:
  using DataError::DataError;
};

// (299 R + 587 G + 114 B) / 1000, rounded half up. Gray input is returned as is.
Image to_grayscale(const Image& image);

using Histogram = std::array<std::uint64_t, 256>;
Histogram histogram(const Image& gray);

struct OtsuResult {
  int threshold = 0;
  bool degenerate = false;  // fewer than two distinct levels
};

// Maximises between-class variance with class 0 = {p <= t}; smallest t among ties.
// Variances are compared exactly.
OtsuResult otsu_threshold(const Histogram& hist);
OtsuResult otsu_threshold(const Image& gray);

enum class Polarity { Dark, Bright };

// Dark: foreground = {p <= t}; Bright: foreground = {p > t}.
Mask threshold_mask(const Image& gray, int threshold, Polarity polarity);

// Square structuring element; pixels outside the mask count as background.
Mask erode(const Mask& mask, std::size_t kernel_size);
Mask dilate(const Mask& mask, std::size_t kernel_size);
Mask morphological_open(const Mask& mask, std::size_t kernel_size);

struct Component {
  Mask mask;
  BBox bbox;
  std::size_t pixels = 0;
};

// Largest 8-connected component; ties go to the bounding box with the smallest
// (row0, col0). Throws NoForegroundError on an empty mask.
Component largest_component(const Mask& mask);

struct AxisAngle {
  double degrees = 0.0;    // in (-90, 90]; x = column, y = row (downwards)
  bool symmetric = false;  // mu20 == mu02 and mu11 == 0
  double centroid_row = 0.0;
  double centroid_col = 0.0;
};

// Major-axis orientation 0.5 * atan2(2 mu11, mu20 - mu02).
AxisAngle principal_axis_angle(const Mask& mask);

struct RotatedImage {
  Image image;
  // Source position of output pixel (r, c):
  //   col = cx + cos(a) (c - ox) - sin(a) (r - oy)
  //   row = cy + sin(a) (c - ox) + cos(a) (r - oy)
  double origin_row = 0.0, origin_col = 0.0;
};

// Rotates by -degrees about (centre_row, centre_col) onto a canvas large enough
// for the whole source; bilinear, `fill` outside the source.
RotatedImage rotate_expand(const Image& image, double degrees, double centre_row, double centre_col,
                           std::uint8_t fill);

struct PreprocessConfig {
  std::size_t kernel_size = 5;
  std::size_t target_size = 224;
  std::size_t pad_margin = 4;
  Polarity polarity = Polarity::Dark;

  void validate() const;
};

struct PreprocessMetadata {
  int threshold = 0;
  bool degenerate_threshold = false;
  double angle_degrees = 0.0;
  bool symmetric = false;
  std::size_t component_pixels = 0;
  BBox source_bbox;
  BBox crop_bbox;  // on the rotated canvas, margin included
  std::size_t target_size = 0;

  nlohmann::json to_json() const;
};

struct PreprocessResult {
  Image image;  // target x target x 3
  Mask mask;    // leaf mask resampled to the output grid
  PreprocessMetadata metadata;
};

// grayscale -> Otsu -> opening -> largest component -> rotate by -angle (white
// fill) -> crop bbox + margin -> bilinear resize to target x target.
PreprocessResult preprocess_pipeline(const Image& image, const PreprocessConfig& config = {});

// Share of output pixels outside the leaf mask.
double background_fraction(const Mask& mask);

}  // namespace adsnn::leaf
