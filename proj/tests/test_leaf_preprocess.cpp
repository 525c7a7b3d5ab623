#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <numbers>
#include <random>
#include <set>

#include <boost/multiprecision/cpp_int.hpp>

#include "adsnn/leaf_preprocess.hpp"
#include "adsnn/synthetic.hpp"

using namespace adsnn;
using namespace adsnn::leaf;
using boost::multiprecision::cpp_rational;

namespace {

// Every threshold maximising the between-class variance, by exhaustive search.
std::set<int> brute_force_maximizers(const Histogram& h) {
  cpp_rational best = -1;
  std::set<int> arg;
  std::uint64_t total = 0;
  cpp_rational total_sum = 0;
  for (int v = 0; v < 256; ++v) {
    total += h[v];
    total_sum += cpp_rational(v) * h[v];
  }
  for (int t = 0; t < 256; ++t) {
    std::uint64_t n0 = 0;
    cpp_rational s0 = 0;
    for (int v = 0; v <= t; ++v) {
      n0 += h[v];
      s0 += cpp_rational(v) * h[v];
    }
    const std::uint64_t n1 = total - n0;
    cpp_rational var = 0;
    if (n0 > 0 && n1 > 0) {
      const cpp_rational mu0 = s0 / n0, mu1 = (total_sum - s0) / n1;
      var = cpp_rational(n0) * n1 * (mu0 - mu1) * (mu0 - mu1) / (cpp_rational(total) * total);
    }
    if (var > best) {
      best = var;
      arg = {t};
    } else if (var == best) {
      arg.insert(t);
    }
  }
  return arg;
}

Image gray_image(std::size_t h, std::size_t w, const std::vector<std::uint8_t>& px) {
  Image img(h, w, 1);
  img.pixels = px;
  return img;
}

Mask random_mask(std::mt19937_64& rng, std::size_t h, std::size_t w, double density) {
  std::bernoulli_distribution on(density);
  Mask m(h, w);
  for (auto& b : m.bits) b = on(rng) ? 1 : 0;
  return m;
}

Mask rect_mask(std::size_t h, std::size_t w, BBox box) {
  Mask m(h, w);
  for (std::size_t r = box.row0; r < box.row1; ++r)
    for (std::size_t c = box.col0; c < box.col1; ++c) m.at(r, c) = 1;
  return m;
}

bool subset(const Mask& a, const Mask& b) {
  for (std::size_t i = 0; i < a.bits.size(); ++i)
    if (a.bits[i] && !b.bits[i]) return false;
  return true;
}

Mask output_mask(const Image& rgb) {
  const Image g = to_grayscale(rgb);
  return largest_component(threshold_mask(g, otsu_threshold(g).threshold, Polarity::Dark)).mask;
}

}  // namespace

TEST_CASE("grayscale luma examples") {
  Image img(1, 3, 3);
  img.pixels = {255, 255, 255, 255, 0, 0, 0, 0, 255};
  const Image g = to_grayscale(img);
  CHECK(g.channels == 1);
  CHECK(g.pixels[0] == 255);
  CHECK(g.pixels[1] == 76);
  CHECK(g.pixels[2] == 29);
  const Image gray = gray_image(1, 3, {0, 77, 200});
  CHECK(to_grayscale(gray) == gray);
}

TEST_CASE("otsu two-level example picks the smallest tied threshold") {
  std::vector<std::uint8_t> px(100, 10);
  std::fill(px.begin() + 50, px.end(), 200);
  const auto r = otsu_threshold(gray_image(10, 10, px));
  CHECK(r.threshold == 10);
  CHECK_FALSE(r.degenerate);
  const auto all = brute_force_maximizers(histogram(gray_image(10, 10, px)));
  CHECK(*all.begin() == 10);
  CHECK(*all.rbegin() == 199);
}

TEST_CASE("otsu on a uniform image is flagged degenerate") {
  const auto r = otsu_threshold(gray_image(4, 4, std::vector<std::uint8_t>(16, 90)));
  CHECK(r.degenerate);
  CHECK(r.threshold == 90);
}

TEST_CASE("otsu equals the brute-force maximiser on random images") {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t h = 5 + rng() % 40, w = 5 + rng() % 40;
    std::vector<std::uint8_t> px(h * w);
    const int levels = 2 + static_cast<int>(rng() % 255);
    for (auto& p : px) p = static_cast<std::uint8_t>(rng() % static_cast<unsigned>(levels) * 255 / (levels - 1));
    px[0] = 0;
    px[1] = 255;
    const Image g = gray_image(h, w, px);
    CHECK(otsu_threshold(g).threshold == *brute_force_maximizers(histogram(g)).begin());
  }
}

TEST_CASE("otsu equals the brute-force maximiser on synthetic leaves") {
  for (int i = 0; i < 10; ++i) {
    synth::EllipseSpec spec;
    spec.angle_degrees = -80 + 17.0 * i;
    spec.color = {static_cast<std::uint8_t>(30 + 9 * i), static_cast<std::uint8_t>(120 + 5 * i), 50};
    Image img = synth::ellipse_image(spec);
    synth::add_speckle(img, 40 * static_cast<std::size_t>(i), 100 + static_cast<std::uint64_t>(i));
    const Image g = to_grayscale(img);
    CHECK(otsu_threshold(g).threshold == *brute_force_maximizers(histogram(g)).begin());
  }
}

TEST_CASE("inverting a two-level image reflects the maximiser set to 254 - t") {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    const auto a = static_cast<std::uint8_t>(rng() % 128), b = static_cast<std::uint8_t>(128 + rng() % 128);
    std::vector<std::uint8_t> px(64, a);
    std::fill(px.begin() + static_cast<long>(1 + rng() % 62), px.end(), b);
    std::vector<std::uint8_t> inv(px.size());
    for (std::size_t i = 0; i < px.size(); ++i) inv[i] = static_cast<std::uint8_t>(255 - px[i]);
    const auto fwd = brute_force_maximizers(histogram(gray_image(8, 8, px)));
    const auto back = brute_force_maximizers(histogram(gray_image(8, 8, inv)));
    std::set<int> reflected;
    for (int t : fwd) reflected.insert(254 - t);
    CHECK(reflected == back);
    CHECK(otsu_threshold(gray_image(8, 8, inv)).threshold == *back.begin());
  }
}

TEST_CASE("opening removes specks and keeps large blocks") {
  Mask speck(9, 9);
  speck.at(4, 4) = 1;
  CHECK(morphological_open(speck, 3).count() == 0);
  const Mask block = rect_mask(20, 20, {5, 5, 15, 15});
  CHECK(morphological_open(block, 3) == block);
  CHECK_THROWS_AS(morphological_open(block, 4), std::invalid_argument);
  CHECK_THROWS_AS(morphological_open(block, 1), std::invalid_argument);
}

TEST_CASE("opening is idempotent and anti-extensive") {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 100; ++trial) {
    const Mask m = random_mask(rng, 8 + rng() % 30, 8 + rng() % 30, 0.3 + 0.6 * static_cast<double>(rng() % 100) / 100);
    const std::size_t k = 3 + 2 * (rng() % 3);
    const Mask once = morphological_open(m, k);
    CHECK(morphological_open(once, k) == once);
    CHECK(subset(once, m));
  }
}

TEST_CASE("largest component selection") {
  Mask m(20, 20);
  for (std::size_t r = 1; r < 4; ++r)
    for (std::size_t c = 1; c < 4; ++c) m.at(r, c) = 1;
  for (std::size_t r = 10; r < 15; ++r)
    for (std::size_t c = 10; c < 15; ++c) m.at(r, c) = 1;
  const auto big = largest_component(m);
  CHECK(big.pixels == 25);
  CHECK(big.bbox == BBox{10, 10, 15, 15});

  const Mask single = rect_mask(10, 10, {2, 3, 6, 8});
  CHECK(largest_component(single).mask == single);

  Mask diagonal(5, 5);
  for (std::size_t i = 0; i < 5; ++i) diagonal.at(i, i) = 1;
  CHECK(largest_component(diagonal).pixels == 5);

  Mask tie(10, 10);
  tie.at(7, 1) = tie.at(7, 2) = 1;
  tie.at(2, 6) = tie.at(2, 7) = 1;
  CHECK(largest_component(tie).bbox == BBox{2, 6, 3, 8});

  CHECK_THROWS_AS(largest_component(Mask(4, 4)), NoForegroundError);
}

TEST_CASE("principal axis of bars, ellipses and discs") {
  CHECK(principal_axis_angle(rect_mask(5, 50, {2, 5, 3, 45})).degrees == doctest::Approx(0.0));
  CHECK(principal_axis_angle(rect_mask(50, 5, {5, 2, 45, 3})).degrees == doctest::Approx(90.0));
  for (double angle : {30.0, -30.0, 60.0, 5.0}) {
    synth::EllipseSpec spec;
    spec.angle_degrees = angle;
    CHECK(std::abs(principal_axis_angle(output_mask(synth::ellipse_image(spec))).degrees - angle) <= 1.0);
  }
  const auto disc = principal_axis_angle(rect_mask(9, 9, {2, 2, 7, 7}));
  CHECK(disc.symmetric);
  CHECK(disc.degrees == 0.0);
}

TEST_CASE("pipeline re-aligns a rotated leaf") {
  synth::EllipseSpec spec;
  spec.angle_degrees = 25;
  const auto result = preprocess_pipeline(synth::ellipse_image(spec));
  CHECK(result.image.height == 224);
  CHECK(result.image.width == 224);
  CHECK(result.image.channels == 3);
  CHECK(result.metadata.angle_degrees == doctest::Approx(25.0).epsilon(0.02));
  CHECK(std::abs(principal_axis_angle(output_mask(result.image)).degrees) <= 2.0);
  CHECK(std::abs(principal_axis_angle(result.mask).degrees) <= 2.0);
  // An ellipse fills pi/4 of its bounding box at best.
  CHECK(background_fraction(result.mask) >= 1.0 - std::numbers::pi / 4 - 0.01);
  CHECK(background_fraction(result.mask) < 0.35);
}

TEST_CASE("pipeline on an already horizontal leaf is near identity") {
  synth::EllipseSpec spec;
  const auto result = preprocess_pipeline(synth::ellipse_image(spec));
  CHECK(std::abs(result.metadata.angle_degrees) < 1.0);
  CHECK(std::abs(principal_axis_angle(result.mask).degrees) < 1.0);
}

TEST_CASE("pipeline ignores speckle noise") {
  synth::EllipseSpec spec;
  spec.angle_degrees = -40;
  Image img = synth::ellipse_image(spec);
  synth::add_speckle(img, 600, 77);
  const auto result = preprocess_pipeline(img);
  const double area = std::numbers::pi * spec.semi_major * spec.semi_minor;
  CHECK(std::abs(static_cast<double>(result.metadata.component_pixels) - area) < 0.05 * area);
  CHECK(std::abs(result.metadata.angle_degrees + 40) <= 1.0);
}

TEST_CASE("pipeline rejects images without a leaf") {
  Image white(50, 60, 3, 255);
  CHECK_THROWS_AS(preprocess_pipeline(white), NoForegroundError);
  PreprocessConfig bad;
  bad.kernel_size = 2;
  CHECK_THROWS_AS(preprocess_pipeline(synth::ellipse_image({}), bad), std::invalid_argument);
}

TEST_CASE("pipeline output size follows the target") {
  PreprocessConfig cfg;
  cfg.target_size = 299;
  synth::EllipseSpec spec;
  spec.angle_degrees = 70;
  const auto r = preprocess_pipeline(synth::ellipse_image(spec), cfg);
  CHECK(r.image.height == 299);
  CHECK(r.image.width == 299);
  CHECK(r.mask.height == 299);
  CHECK(r.metadata.to_json().at("target_size") == 299);
}

TEST_CASE("bright polarity selects the lighter class") {
  synth::EllipseSpec spec;
  spec.color = {250, 250, 250};
  spec.background = {10, 10, 10};
  PreprocessConfig cfg;
  cfg.polarity = Polarity::Bright;
  const auto r = preprocess_pipeline(synth::ellipse_image(spec), cfg);
  CHECK(std::abs(r.metadata.angle_degrees) < 1.0);
}

TEST_CASE("png and ppm round trips") {
  const auto dir = std::filesystem::temp_directory_path() / "adsnn_test_image_io";
  std::filesystem::create_directories(dir);
  Image img(7, 5, 3);
  for (std::size_t i = 0; i < img.pixels.size(); ++i) img.pixels[i] = static_cast<std::uint8_t>(i * 7);
  write_png(img, dir / "a.png");
  write_ppm(img, dir / "a.ppm");
  CHECK(read_image(dir / "a.png") == img);
  CHECK(read_image(dir / "a.ppm") == img);
  CHECK_THROWS_AS(read_image(dir / "missing.png"), DataError);
  std::filesystem::remove_all(dir);
}

TEST_CASE("bilinear resize keeps constant images constant") {
  Image img(13, 17, 3, 91);
  const Image out = resize_bilinear(img, 31, 8);
  CHECK(out.height == 31);
  CHECK(out.width == 8);
  for (auto p : out.pixels) CHECK(p == 91);
}
