#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <vector>

#include "adsnn/tensor.hpp"

namespace adsnn {

// Missing, empty or undecodable input data.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// 8-bit image, row-major, channels interleaved.
struct Image {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t channels = 0;
  std::vector<std::uint8_t> pixels;

  Image() = default;
  Image(std::size_t h, std::size_t w, std::size_t c, std::uint8_t fill = 0);

  std::uint8_t& at(std::size_t row, std::size_t col, std::size_t ch = 0) {
    return pixels[(row * width + col) * channels + ch];
  }
  std::uint8_t at(std::size_t row, std::size_t col, std::size_t ch = 0) const {
    return pixels[(row * width + col) * channels + ch];
  }
  bool empty() const { return pixels.empty(); }

  bool operator==(const Image&) const = default;
};

// PNG (8-bit gray, gray+alpha, RGB or RGBA; alpha dropped) or binary PPM (P6, maxval 255).
Image read_image(const std::filesystem::path& path);
void write_png(const Image& image, const std::filesystem::path& path);
void write_ppm(const Image& image, const std::filesystem::path& path);

// Bilinear with half-pixel centres and edge clamping.
Image resize_bilinear(const Image& image, std::size_t height, std::size_t width);

// Gray images are replicated to three channels.
Image to_rgb(const Image& image);

// HxWx3 float tensor scaled to [-1, 1] (x / 127.5 - 1).
Tensor<float> image_to_tensor(const Image& image);
// Inverse of image_to_tensor, rounding and clipping to [0, 255].
Image tensor_to_image(const Tensor<float>& tensor);

}  // namespace adsnn
