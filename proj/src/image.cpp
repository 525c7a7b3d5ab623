#include "adsnn/image.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <memory>
#include <string>

namespace adsnn {
namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

Image read_png(const std::filesystem::path& path) {
  FilePtr file(std::fopen(path.c_str(), "rb"));
  if (!file) throw DataError("cannot open " + path.string());

  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw std::runtime_error("libpng initialisation failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw std::runtime_error("libpng initialisation failed");
  }
  Image image;
  std::vector<png_bytep> rows;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw DataError(path.string() + ": corrupt PNG");
  }
  png_init_io(png, file.get());
  png_read_info(png, info);
  const png_byte color = png_get_color_type(png, info);
  if (png_get_bit_depth(png, info) == 16) png_set_strip_16(png);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && png_get_bit_depth(png, info) < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  png_set_strip_alpha(png);
  png_read_update_info(png, info);

  image.height = png_get_image_height(png, info);
  image.width = png_get_image_width(png, info);
  image.channels = png_get_channels(png, info);
  image.pixels.resize(image.height * image.width * image.channels);
  rows.resize(image.height);
  for (std::size_t r = 0; r < image.height; ++r) rows[r] = image.pixels.data() + r * image.width * image.channels;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  if (image.channels != 1 && image.channels != 3) throw DataError(path.string() + ": unsupported PNG channel layout");
  return image;
}

// Skips whitespace and '#' comments between PPM header fields.
std::size_t read_ppm_field(const std::string& bytes, std::size_t& pos, const std::filesystem::path& path) {
  while (pos < bytes.size()) {
    if (bytes[pos] == '#') {
      while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
    } else if (std::isspace(static_cast<unsigned char>(bytes[pos]))) {
      ++pos;
    } else {
      break;
    }
  }
  std::size_t value = 0, digits = 0;
  while (pos < bytes.size() && std::isdigit(static_cast<unsigned char>(bytes[pos]))) {
    value = value * 10 + static_cast<std::size_t>(bytes[pos++] - '0');
    if (++digits > 9) throw DataError(path.string() + ": PPM header field too large");
  }
  if (digits == 0) throw DataError(path.string() + ": malformed PPM header");
  return value;
}

Image read_ppm(const std::string& bytes, const std::filesystem::path& path) {
  std::size_t pos = 2;
  Image image;
  image.width = read_ppm_field(bytes, pos, path);
  image.height = read_ppm_field(bytes, pos, path);
  const std::size_t maxval = read_ppm_field(bytes, pos, path);
  if (maxval != 255) throw DataError(path.string() + ": only 8-bit PPM (maxval 255) is supported");
  if (image.width == 0 || image.height == 0) throw DataError(path.string() + ": empty PPM image");
  ++pos;  // single whitespace before the raster
  image.channels = 3;
  const std::size_t n = image.width * image.height * 3;
  if (bytes.size() < pos + n) throw DataError(path.string() + ": truncated PPM raster");
  image.pixels.assign(bytes.begin() + static_cast<std::ptrdiff_t>(pos),
                      bytes.begin() + static_cast<std::ptrdiff_t>(pos + n));
  return image;
}

double sample_clamped(const Image& img, double y, double x, std::size_t ch) {
  y = std::clamp(y, 0.0, static_cast<double>(img.height - 1));
  x = std::clamp(x, 0.0, static_cast<double>(img.width - 1));
  const auto y0 = static_cast<std::size_t>(y), x0 = static_cast<std::size_t>(x);
  const std::size_t y1 = std::min(y0 + 1, img.height - 1), x1 = std::min(x0 + 1, img.width - 1);
  const double fy = y - static_cast<double>(y0), fx = x - static_cast<double>(x0);
  const double top = img.at(y0, x0, ch) * (1 - fx) + img.at(y0, x1, ch) * fx;
  const double bottom = img.at(y1, x0, ch) * (1 - fx) + img.at(y1, x1, ch) * fx;
  return top * (1 - fy) + bottom * fy;
}

std::uint8_t to_byte(double v) { return static_cast<std::uint8_t>(std::clamp(std::floor(v + 0.5), 0.0, 255.0)); }

}  // namespace

Image::Image(std::size_t h, std::size_t w, std::size_t c, std::uint8_t fill)
    : height(h), width(w), channels(c), pixels(h * w * c, fill) {}

Image read_image(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  char magic[8] = {};
  in.read(magic, sizeof magic);
  const auto got = in.gcount();
  if (got >= 8 && png_sig_cmp(reinterpret_cast<png_const_bytep>(magic), 0, 8) == 0) return read_png(path);
  if (got >= 2 && magic[0] == 'P' && magic[1] == '6') {
    in.clear();
    in.seekg(0);
    const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return read_ppm(bytes, path);
  }
  throw DataError(path.string() + ": not a PNG or binary PPM image");
}

void write_png(const Image& image, const std::filesystem::path& path) {
  if (image.empty() || (image.channels != 1 && image.channels != 3)) {
    throw std::invalid_argument("write_png: expected a non-empty gray or RGB image");
  }
  FilePtr file(std::fopen(path.c_str(), "wb"));
  if (!file) throw std::runtime_error("cannot open " + path.string() + " for writing");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw std::runtime_error("libpng initialisation failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw std::runtime_error("failed writing " + path.string());
  }
  png_init_io(png, file.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(image.width), static_cast<png_uint_32>(image.height), 8,
               image.channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (std::size_t r = 0; r < image.height; ++r) {
    png_write_row(png, image.pixels.data() + r * image.width * image.channels);
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

void write_ppm(const Image& image, const std::filesystem::path& path) {
  const Image rgb = to_rgb(image);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out << "P6\n" << rgb.width << ' ' << rgb.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(rgb.pixels.data()), static_cast<std::streamsize>(rgb.pixels.size()));
}

Image resize_bilinear(const Image& image, std::size_t height, std::size_t width) {
  if (image.empty() || height == 0 || width == 0) throw std::invalid_argument("resize_bilinear: empty image or size");
  Image out(height, width, image.channels);
  const double sy = static_cast<double>(image.height) / static_cast<double>(height);
  const double sx = static_cast<double>(image.width) / static_cast<double>(width);
  for (std::size_t r = 0; r < height; ++r) {
    const double y = (static_cast<double>(r) + 0.5) * sy - 0.5;
    for (std::size_t c = 0; c < width; ++c) {
      const double x = (static_cast<double>(c) + 0.5) * sx - 0.5;
      for (std::size_t ch = 0; ch < image.channels; ++ch) out.at(r, c, ch) = to_byte(sample_clamped(image, y, x, ch));
    }
  }
  return out;
}

Image to_rgb(const Image& image) {
  if (image.channels == 3) return image;
  if (image.channels != 1) throw std::invalid_argument("to_rgb: expected 1 or 3 channels");
  Image out(image.height, image.width, 3);
  for (std::size_t i = 0; i < image.pixels.size(); ++i) {
    out.pixels[3 * i] = out.pixels[3 * i + 1] = out.pixels[3 * i + 2] = image.pixels[i];
  }
  return out;
}

Tensor<float> image_to_tensor(const Image& image) {
  const Image rgb = to_rgb(image);
  Tensor<float> t(Shape{rgb.height, rgb.width, 3});
  auto data = t.mutable_data();
  for (std::size_t i = 0; i < rgb.pixels.size(); ++i) data[i] = static_cast<float>(rgb.pixels[i]) / 127.5f - 1.0f;
  return t;
}

Image tensor_to_image(const Tensor<float>& tensor) {
  if (tensor.rank() != 3 || (tensor.dim(2) != 1 && tensor.dim(2) != 3)) {
    throw DimensionError("tensor_to_image expects HxWx1 or HxWx3, got " + shape_string(tensor.shape()));
  }
  Image out(tensor.dim(0), tensor.dim(1), tensor.dim(2));
  for (std::size_t i = 0; i < tensor.size(); ++i) out.pixels[i] = to_byte((tensor[i] + 1.0) * 127.5);
  return out;
}

}  // namespace adsnn
