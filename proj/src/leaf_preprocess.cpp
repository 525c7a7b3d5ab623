#include "adsnn/leaf_preprocess.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <queue>

#include <boost/multiprecision/cpp_int.hpp>

namespace adsnn::leaf {
namespace {

using boost::multiprecision::uint256_t;

void require_gray(const Image& gray, const char* what) {
  if (gray.channels != 1 || gray.empty()) throw std::invalid_argument(std::string(what) + " expects a non-empty gray image");
}

void require_kernel(std::size_t k) {
  if (k < 3 || k % 2 == 0) throw std::invalid_argument("structuring element size must be odd and >= 3, got " + std::to_string(k));
}

// One pass of a square min (erode) or max (dilate) filter along rows or columns.
Mask window_pass(const Mask& in, std::size_t k, bool along_rows, bool erode_mode) {
  Mask out(in.height, in.width);
  const auto r = static_cast<std::ptrdiff_t>(k / 2);
  const auto lines = static_cast<std::ptrdiff_t>(along_rows ? in.height : in.width);
  const auto len = static_cast<std::ptrdiff_t>(along_rows ? in.width : in.height);
  std::vector<std::size_t> prefix(static_cast<std::size_t>(len) + 1);
  for (std::ptrdiff_t line = 0; line < lines; ++line) {
    auto get = [&](std::ptrdiff_t i) {
      return along_rows ? in.bits[static_cast<std::size_t>(line * len + i)]
                        : in.bits[static_cast<std::size_t>(i * lines + line)];
    };
    for (std::ptrdiff_t i = 0; i < len; ++i) prefix[static_cast<std::size_t>(i + 1)] = prefix[static_cast<std::size_t>(i)] + get(i);
    for (std::ptrdiff_t i = 0; i < len; ++i) {
      const std::ptrdiff_t lo = i - r, hi = i + r;
      const std::size_t ones = prefix[static_cast<std::size_t>(std::min(hi, len - 1) + 1)] -
                               prefix[static_cast<std::size_t>(std::max<std::ptrdiff_t>(lo, 0))];
      // Outside pixels are background: erosion fails whenever the window leaves the mask.
      const bool value = erode_mode ? (lo >= 0 && hi < len && ones == k) : ones > 0;
      const std::size_t idx = along_rows ? static_cast<std::size_t>(line * len + i) : static_cast<std::size_t>(i * lines + line);
      out.bits[idx] = value ? 1 : 0;
    }
  }
  return out;
}

double bilinear_fill(const Image& img, double y, double x, std::size_t ch, double fill) {
  const double fy = std::floor(y), fx = std::floor(x);
  const auto y0 = static_cast<std::ptrdiff_t>(fy), x0 = static_cast<std::ptrdiff_t>(fx);
  const double wy = y - fy, wx = x - fx;
  auto px = [&](std::ptrdiff_t r, std::ptrdiff_t c) {
    if (r < 0 || c < 0 || r >= static_cast<std::ptrdiff_t>(img.height) || c >= static_cast<std::ptrdiff_t>(img.width)) {
      return fill;
    }
    return static_cast<double>(img.at(static_cast<std::size_t>(r), static_cast<std::size_t>(c), ch));
  };
  const double top = px(y0, x0) * (1 - wx) + px(y0, x0 + 1) * wx;
  const double bottom = px(y0 + 1, x0) * (1 - wx) + px(y0 + 1, x0 + 1) * wx;
  return top * (1 - wy) + bottom * wy;
}

Image mask_to_image(const Mask& mask) {
  Image img(mask.height, mask.width, 1);
  for (std::size_t i = 0; i < mask.bits.size(); ++i) img.pixels[i] = mask.bits[i] ? 255 : 0;
  return img;
}

Mask image_to_mask(const Image& img) {
  Mask mask(img.height, img.width);
  for (std::size_t i = 0; i < img.pixels.size(); ++i) mask.bits[i] = img.pixels[i] >= 128 ? 1 : 0;
  return mask;
}

Image crop(const Image& img, const BBox& box) {
  Image out(box.height(), box.width(), img.channels);
  for (std::size_t r = 0; r < box.height(); ++r) {
    const auto* src = img.pixels.data() + ((box.row0 + r) * img.width + box.col0) * img.channels;
    std::copy(src, src + box.width() * img.channels, out.pixels.data() + r * box.width() * img.channels);
  }
  return out;
}

BBox mask_bbox(const Mask& mask) {
  BBox box{mask.height, mask.width, 0, 0};
  bool any = false;
  for (std::size_t r = 0; r < mask.height; ++r) {
    for (std::size_t c = 0; c < mask.width; ++c) {
      if (!mask.at(r, c)) continue;
      any = true;
      box.row0 = std::min(box.row0, r);
      box.col0 = std::min(box.col0, c);
      box.row1 = std::max(box.row1, r + 1);
      box.col1 = std::max(box.col1, c + 1);
    }
  }
  if (!any) throw NoForegroundError("no foreground");
  return box;
}

}  // namespace

std::size_t Mask::count() const { return static_cast<std::size_t>(std::count(bits.begin(), bits.end(), 1)); }

Image to_grayscale(const Image& image) {
  if (image.channels == 1) return image;
  if (image.channels != 3) throw std::invalid_argument("to_grayscale expects 1 or 3 channels");
  Image gray(image.height, image.width, 1);
  for (std::size_t i = 0; i < gray.pixels.size(); ++i) {
    const unsigned r = image.pixels[3 * i], g = image.pixels[3 * i + 1], b = image.pixels[3 * i + 2];
    gray.pixels[i] = static_cast<std::uint8_t>((299 * r + 587 * g + 114 * b + 500) / 1000);
  }
  return gray;
}

Histogram histogram(const Image& gray) {
  require_gray(gray, "histogram");
  Histogram h{};
  for (auto p : gray.pixels) ++h[p];
  return h;
}

OtsuResult otsu_threshold(const Histogram& hist) {
  std::uint64_t total = 0, total_sum = 0;
  int levels = 0, only = 0;
  for (int v = 0; v < 256; ++v) {
    total += hist[static_cast<std::size_t>(v)];
    total_sum += hist[static_cast<std::size_t>(v)] * static_cast<std::uint64_t>(v);
    if (hist[static_cast<std::size_t>(v)] > 0) {
      ++levels;
      only = v;
    }
  }
  if (total == 0) throw std::invalid_argument("otsu_threshold: empty histogram");
  if (total > (std::uint64_t{1} << 32)) throw std::invalid_argument("otsu_threshold: more than 2^32 pixels");
  if (levels < 2) return {only, true};

  // Between-class variance is proportional to (S n0 - N s0)^2 / (n0 (N - n0)).
  int best_t = 0;
  uint256_t best_num = 0, best_den = 1;
  std::uint64_t n0 = 0, s0 = 0;
  for (int t = 0; t < 256; ++t) {
    n0 += hist[static_cast<std::size_t>(t)];
    s0 += hist[static_cast<std::size_t>(t)] * static_cast<std::uint64_t>(t);
    if (n0 == 0 || n0 == total) continue;
    const unsigned __int128 a = static_cast<unsigned __int128>(total_sum) * n0;
    const unsigned __int128 b = static_cast<unsigned __int128>(total) * s0;
    const uint256_t diff = a > b ? uint256_t(a - b) : uint256_t(b - a);
    const uint256_t num = diff * diff;
    const uint256_t den = uint256_t(n0) * (total - n0);
    if (num * best_den > best_num * den) {
      best_num = num;
      best_den = den;
      best_t = t;
    }
  }
  return {best_t, false};
}

OtsuResult otsu_threshold(const Image& gray) { return otsu_threshold(histogram(gray)); }

Mask threshold_mask(const Image& gray, int threshold, Polarity polarity) {
  require_gray(gray, "threshold_mask");
  Mask mask(gray.height, gray.width);
  for (std::size_t i = 0; i < gray.pixels.size(); ++i) {
    const bool dark = gray.pixels[i] <= threshold;
    mask.bits[i] = (polarity == Polarity::Dark ? dark : !dark) ? 1 : 0;
  }
  return mask;
}

Mask erode(const Mask& mask, std::size_t kernel_size) {
  require_kernel(kernel_size);
  return window_pass(window_pass(mask, kernel_size, true, true), kernel_size, false, true);
}

Mask dilate(const Mask& mask, std::size_t kernel_size) {
  require_kernel(kernel_size);
  return window_pass(window_pass(mask, kernel_size, true, false), kernel_size, false, false);
}

Mask morphological_open(const Mask& mask, std::size_t kernel_size) { return dilate(erode(mask, kernel_size), kernel_size); }

Component largest_component(const Mask& mask) {
  std::vector<std::int32_t> label(mask.bits.size(), -1);
  Component best;
  bool found = false;
  std::vector<std::size_t> members;
  std::queue<std::size_t> frontier;
  std::int32_t next_label = 0;
  for (std::size_t start = 0; start < mask.bits.size(); ++start) {
    if (!mask.bits[start] || label[start] >= 0) continue;
    members.clear();
    label[start] = next_label;
    frontier.push(start);
    BBox box{mask.height, mask.width, 0, 0};
    while (!frontier.empty()) {
      const std::size_t idx = frontier.front();
      frontier.pop();
      members.push_back(idx);
      const std::size_t r = idx / mask.width, c = idx % mask.width;
      box.row0 = std::min(box.row0, r);
      box.col0 = std::min(box.col0, c);
      box.row1 = std::max(box.row1, r + 1);
      box.col1 = std::max(box.col1, c + 1);
      for (int dr = -1; dr <= 1; ++dr) {
        for (int dc = -1; dc <= 1; ++dc) {
          const auto nr = static_cast<std::ptrdiff_t>(r) + dr, nc = static_cast<std::ptrdiff_t>(c) + dc;
          if (nr < 0 || nc < 0 || nr >= static_cast<std::ptrdiff_t>(mask.height) ||
              nc >= static_cast<std::ptrdiff_t>(mask.width)) {
            continue;
          }
          const std::size_t n = static_cast<std::size_t>(nr) * mask.width + static_cast<std::size_t>(nc);
          if (mask.bits[n] && label[n] < 0) {
            label[n] = next_label;
            frontier.push(n);
          }
        }
      }
    }
    ++next_label;
    const bool better = !found || members.size() > best.pixels ||
                        (members.size() == best.pixels &&
                         std::pair(box.row0, box.col0) < std::pair(best.bbox.row0, best.bbox.col0));
    if (better) {
      found = true;
      best.pixels = members.size();
      best.bbox = box;
      best.mask = Mask(mask.height, mask.width);
      for (auto idx : members) best.mask.bits[idx] = 1;
    }
  }
  if (!found) throw NoForegroundError("no foreground");
  return best;
}

AxisAngle principal_axis_angle(const Mask& mask) {
  double n = 0, sx = 0, sy = 0;
  for (std::size_t r = 0; r < mask.height; ++r) {
    for (std::size_t c = 0; c < mask.width; ++c) {
      if (!mask.at(r, c)) continue;
      n += 1;
      sx += static_cast<double>(c);
      sy += static_cast<double>(r);
    }
  }
  if (n == 0) throw NoForegroundError("no foreground");
  AxisAngle out;
  out.centroid_col = sx / n;
  out.centroid_row = sy / n;
  double mu20 = 0, mu02 = 0, mu11 = 0;
  for (std::size_t r = 0; r < mask.height; ++r) {
    for (std::size_t c = 0; c < mask.width; ++c) {
      if (!mask.at(r, c)) continue;
      const double dx = static_cast<double>(c) - out.centroid_col, dy = static_cast<double>(r) - out.centroid_row;
      mu20 += dx * dx;
      mu02 += dy * dy;
      mu11 += dx * dy;
    }
  }
  const double scale = std::max({mu20, mu02, 1.0});
  if (std::abs(mu20 - mu02) <= 1e-12 * scale && std::abs(mu11) <= 1e-12 * scale) {
    out.symmetric = true;
    return out;
  }
  double deg = 0.5 * std::atan2(2 * mu11, mu20 - mu02) * 180.0 / std::numbers::pi;
  if (deg <= -90.0) deg += 180.0;
  out.degrees = deg;
  return out;
}

RotatedImage rotate_expand(const Image& image, double degrees, double centre_row, double centre_col,
                           std::uint8_t fill) {
  if (image.empty()) throw std::invalid_argument("rotate_expand: empty image");
  const double a = degrees * std::numbers::pi / 180.0;
  const double ca = std::cos(a), sa = std::sin(a);
  // Output frame: p_out = R(-a) (p_src - centre) + origin.
  double min_x = 0, max_x = 0, min_y = 0, max_y = 0;
  bool first = true;
  for (double y : {-0.5, static_cast<double>(image.height) - 0.5}) {
    for (double x : {-0.5, static_cast<double>(image.width) - 0.5}) {
      const double dx = x - centre_col, dy = y - centre_row;
      const double ox = ca * dx + sa * dy, oy = -sa * dx + ca * dy;
      if (first) {
        min_x = max_x = ox;
        min_y = max_y = oy;
        first = false;
      }
      min_x = std::min(min_x, ox);
      max_x = std::max(max_x, ox);
      min_y = std::min(min_y, oy);
      max_y = std::max(max_y, oy);
    }
  }
  RotatedImage out;
  out.origin_col = -min_x - 0.5;
  out.origin_row = -min_y - 0.5;
  const auto width = static_cast<std::size_t>(std::ceil(max_x - min_x - 1e-9));
  const auto height = static_cast<std::size_t>(std::ceil(max_y - min_y - 1e-9));
  out.image = Image(std::max<std::size_t>(height, 1), std::max<std::size_t>(width, 1), image.channels);
  for (std::size_t r = 0; r < out.image.height; ++r) {
    for (std::size_t c = 0; c < out.image.width; ++c) {
      const double dx = static_cast<double>(c) - out.origin_col, dy = static_cast<double>(r) - out.origin_row;
      const double x = centre_col + ca * dx - sa * dy;
      const double y = centre_row + sa * dx + ca * dy;
      for (std::size_t ch = 0; ch < image.channels; ++ch) {
        const double v = bilinear_fill(image, y, x, ch, fill);
        out.image.at(r, c, ch) = static_cast<std::uint8_t>(std::clamp(std::floor(v + 0.5), 0.0, 255.0));
      }
    }
  }
  return out;
}

void PreprocessConfig::validate() const {
  require_kernel(kernel_size);
  if (target_size == 0) throw std::invalid_argument("target size must be positive");
}

nlohmann::json PreprocessMetadata::to_json() const {
  auto box = [](const BBox& b) { return nlohmann::json{{"row0", b.row0}, {"col0", b.col0}, {"row1", b.row1}, {"col1", b.col1}}; };
  return {{"threshold", threshold},
          {"degenerate_threshold", degenerate_threshold},
          {"angle_degrees", angle_degrees},
          {"symmetric", symmetric},
          {"component_pixels", component_pixels},
          {"source_bbox", box(source_bbox)},
          {"crop_bbox", box(crop_bbox)},
          {"target_size", target_size}};
}

PreprocessResult preprocess_pipeline(const Image& image, const PreprocessConfig& config) {
  config.validate();
  if (image.empty()) throw DataError("empty image");
  const Image rgb = to_rgb(image);
  const Image gray = to_grayscale(rgb);
  PreprocessResult result;
  auto& meta = result.metadata;
  meta.target_size = config.target_size;

  const OtsuResult otsu = otsu_threshold(gray);
  meta.threshold = otsu.threshold;
  meta.degenerate_threshold = otsu.degenerate;
  Mask mask = threshold_mask(gray, otsu.threshold, config.polarity);
  // A single-level image has no two-class split; everything would be "foreground".
  if (otsu.degenerate) mask = Mask(gray.height, gray.width);
  mask = morphological_open(mask, config.kernel_size);
  const Component leaf = largest_component(mask);
  meta.component_pixels = leaf.pixels;
  meta.source_bbox = leaf.bbox;

  const AxisAngle axis = principal_axis_angle(leaf.mask);
  meta.angle_degrees = axis.degrees;
  meta.symmetric = axis.symmetric;

  const std::uint8_t fill = config.polarity == Polarity::Dark ? 255 : 0;
  const RotatedImage rotated = rotate_expand(rgb, axis.degrees, axis.centroid_row, axis.centroid_col, fill);
  const RotatedImage rotated_mask =
      rotate_expand(mask_to_image(leaf.mask), axis.degrees, axis.centroid_row, axis.centroid_col, 0);
  const Mask canvas_mask = image_to_mask(rotated_mask.image);
  const BBox tight = mask_bbox(canvas_mask);
  const std::size_t m = config.pad_margin;
  meta.crop_bbox = {tight.row0 >= m ? tight.row0 - m : 0, tight.col0 >= m ? tight.col0 - m : 0,
                    std::min(tight.row1 + m, canvas_mask.height), std::min(tight.col1 + m, canvas_mask.width)};

  result.image = resize_bilinear(crop(rotated.image, meta.crop_bbox), config.target_size, config.target_size);
  result.mask = image_to_mask(
      resize_bilinear(crop(rotated_mask.image, meta.crop_bbox), config.target_size, config.target_size));
  return result;
}

double background_fraction(const Mask& mask) {
  if (mask.bits.empty()) throw std::invalid_argument("background_fraction: empty mask");
  return 1.0 - static_cast<double>(mask.count()) / static_cast<double>(mask.bits.size());
}

}  // namespace adsnn::leaf
