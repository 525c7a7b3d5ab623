#include "adsnn/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <numbers>
#include <random>

#include "adsnn/random.hpp"

namespace adsnn::synth {
namespace {

constexpr int kSupersample = 4;

using Inside = std::function<bool(double x, double y)>;  // local, unrotated shape frame

// Blends `color` over `image` wherever the rotated shape covers a pixel.
void paint(Image& image, double cx, double cy, double angle_rad, double reach, const Inside& inside, const Rgb& color) {
  const double ca = std::cos(angle_rad), sa = std::sin(angle_rad);
  const auto r0 = static_cast<std::ptrdiff_t>(std::floor(cy - reach)), r1 = static_cast<std::ptrdiff_t>(std::ceil(cy + reach));
  const auto c0 = static_cast<std::ptrdiff_t>(std::floor(cx - reach)), c1 = static_cast<std::ptrdiff_t>(std::ceil(cx + reach));
  for (std::ptrdiff_t r = std::max<std::ptrdiff_t>(r0, 0); r <= std::min<std::ptrdiff_t>(r1, static_cast<std::ptrdiff_t>(image.height) - 1); ++r) {
    for (std::ptrdiff_t c = std::max<std::ptrdiff_t>(c0, 0); c <= std::min<std::ptrdiff_t>(c1, static_cast<std::ptrdiff_t>(image.width) - 1); ++c) {
      int hits = 0;
      for (int sy = 0; sy < kSupersample; ++sy) {
        for (int sx = 0; sx < kSupersample; ++sx) {
          const double px = static_cast<double>(c) + (sx + 0.5) / kSupersample - 0.5 - cx;
          const double py = static_cast<double>(r) + (sy + 0.5) / kSupersample - 0.5 - cy;
          // Into the shape frame: rotate by -angle.
          if (inside(ca * px + sa * py, -sa * px + ca * py)) ++hits;
        }
      }
      if (hits == 0) continue;
      const double w = static_cast<double>(hits) / (kSupersample * kSupersample);
      for (std::size_t ch = 0; ch < image.channels; ++ch) {
        auto& p = image.at(static_cast<std::size_t>(r), static_cast<std::size_t>(c), ch);
        p = static_cast<std::uint8_t>(std::lround(p * (1 - w) + color[ch] * w));
      }
    }
  }
}

Inside ellipse(double a, double b) {
  return [a, b](double x, double y) { return (x * x) / (a * a) + (y * y) / (b * b) <= 1.0; };
}

Rgb jitter(Rgb base, std::mt19937_64& rng, int amount) {
  std::uniform_int_distribution<int> d(-amount, amount);
  for (auto& v : base) v = static_cast<std::uint8_t>(std::clamp(v + d(rng), 0, 255));
  return base;
}

}  // namespace

Image ellipse_image(const EllipseSpec& spec) {
  Image img(spec.height, spec.width, 3);
  for (std::size_t i = 0; i < spec.height * spec.width; ++i) {
    for (std::size_t ch = 0; ch < 3; ++ch) img.pixels[3 * i + ch] = spec.background[ch];
  }
  paint(img, spec.centre_col, spec.centre_row, spec.angle_degrees * std::numbers::pi / 180.0, spec.semi_major + 1,
        ellipse(spec.semi_major, spec.semi_minor), spec.color);
  return img;
}

void add_speckle(Image& image, std::size_t count, std::uint64_t seed, Rgb color) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> row(0, image.height - 1), col(0, image.width - 1);
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t r = row(rng), c = col(rng);
    for (std::size_t ch = 0; ch < image.channels; ++ch) image.at(r, c, ch) = color[std::min<std::size_t>(ch, 2)];
  }
}

const std::vector<std::string>& shape_class_names() {
  static const std::vector<std::string> names{"brownspot", "healthy", "hispa", "leafblast"};
  return names;
}

Image shape_sample(int label, std::size_t size, std::uint64_t seed) {
  if (label < 0 || label > 3) throw std::invalid_argument("shape class label must be in [0, 4)");
  if (size < 16) throw std::invalid_argument("shape samples need at least 16x16 pixels");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> noise(0.0, 6.0);
  const double s = static_cast<double>(size);

  Image img(size, size, 3);
  const int base = 225 + static_cast<int>(unit(rng) * 25);
  for (auto& p : img.pixels) p = static_cast<std::uint8_t>(std::clamp(base + std::lround(noise(rng)), 0L, 255L));

  const double extent = s * (0.22 + 0.12 * unit(rng));  // shape half-size
  const double margin = extent + 2;
  const double cx = margin + unit(rng) * (s - 2 * margin), cy = margin + unit(rng) * (s - 2 * margin);
  const double angle = unit(rng) * std::numbers::pi;
  switch (label) {
    case 0:  // brown disc
      paint(img, cx, cy, 0.0, extent + 1, ellipse(extent * 0.8, extent * 0.8), jitter({139, 80, 30}, rng, 20));
      break;
    case 1:  // elongated green ellipse
      paint(img, cx, cy, angle, extent + 1, ellipse(extent, extent * 0.4), jitter({50, 150, 60}, rng, 20));
      break;
    case 2: {  // pale yellow square
      const double h = extent * 0.7;
      paint(img, cx, cy, angle, extent + 1, [h](double x, double y) { return std::abs(x) <= h && std::abs(y) <= h; },
            jitter({215, 200, 70}, rng, 20));
      break;
    }
    default: {  // grey diamond with a dark rim
      const double h = extent;
      paint(img, cx, cy, angle, extent + 1, [h](double x, double y) { return std::abs(x) / h + std::abs(y) / (0.6 * h) <= 1.0; },
            jitter({60, 60, 70}, rng, 15));
      paint(img, cx, cy, angle, extent + 1,
            [h](double x, double y) { return std::abs(x) / (0.75 * h) + std::abs(y) / (0.42 * h) <= 1.0; },
            jitter({150, 150, 160}, rng, 15));
      break;
    }
  }
  return img;
}

Dataset make_shape_dataset(std::size_t per_class, std::size_t size, std::uint64_t seed) {
  Dataset data;
  data.class_names = shape_class_names();
  for (int label = 0; label < 4; ++label) {
    for (std::size_t i = 0; i < per_class; ++i) {
      const std::uint64_t sample_seed = derive_seed(seed, static_cast<std::uint64_t>(label) * 1'000'003 + i);
      char name[64];
      std::snprintf(name, sizeof name, "%s/%s_%03zu.png", data.class_names[static_cast<std::size_t>(label)].c_str(),
                    data.class_names[static_cast<std::size_t>(label)].c_str(), i);
      data.samples.push_back({image_to_tensor(shape_sample(label, size, sample_seed)), label, name});
    }
  }
  return data;
}

std::size_t write_shape_dataset(const std::filesystem::path& root, std::size_t per_class, std::size_t size,
                                std::uint64_t seed) {
  std::size_t written = 0;
  const auto& names = shape_class_names();
  for (int label = 0; label < 4; ++label) {
    const auto dir = root / names[static_cast<std::size_t>(label)];
    std::filesystem::create_directories(dir);
    for (std::size_t i = 0; i < per_class; ++i) {
      const std::uint64_t sample_seed = derive_seed(seed, static_cast<std::uint64_t>(label) * 1'000'003 + i);
      char name[64];
      std::snprintf(name, sizeof name, "%s_%03zu.png", names[static_cast<std::size_t>(label)].c_str(), i);
      write_png(shape_sample(label, size, sample_seed), dir / name);
      ++written;
    }
  }
  return written;
}

}  // namespace adsnn::synth
