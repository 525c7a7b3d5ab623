#include "adsnn/feature_viz.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>
#include <string>

namespace adsnn::viz {
namespace {

struct LossAndGradient {
  double loss = 0.0;
  Tensor<float> gradient;
};

LossAndGradient evaluate(Model& model, const Tensor<float>& input, std::size_t layer, std::size_t filter) {
  Tape<float> tape;
  const Tensor<float> x = tape.watch(input.clone());
  const Tensor<float> out = model.forward_to(x, layer, Mode::Eval);
  const Tensor<float> loss = mean(slice(out, out.rank() - 1, filter, filter + 1));
  const auto grads = tape.backward(loss);
  return {static_cast<double>(loss.item()), grads[x].clone()};
}

Image quantize(const Tensor<float>& pixels) {
  const auto& s = pixels.shape();
  Image img(s[s.size() - 3], s[s.size() - 2], s[s.size() - 1]);
  const auto data = pixels.data();
  for (std::size_t i = 0; i < img.pixels.size(); ++i) {
    img.pixels[i] = static_cast<std::uint8_t>(std::lround(std::clamp(static_cast<double>(data[i]), 0.0, 255.0)));
  }
  return img;
}

Image deprocess(const Tensor<float>& x) {
  const auto data = x.data();
  const auto n = static_cast<double>(data.size());
  double mean_v = 0.0;
  for (float v : data) mean_v += v;
  mean_v /= n;
  double var = 0.0;
  for (float v : data) var += (v - mean_v) * (v - mean_v);
  const double sd = std::sqrt(var / n);
  Tensor<float> out(x.shape());
  auto o = out.mutable_data();
  for (std::size_t i = 0; i < data.size(); ++i) {
    const double v = std::clamp((data[i] - mean_v) / (sd + 1e-5) * 0.1 + 0.5, 0.0, 1.0);
    o[i] = static_cast<float>(v * 255.0);
  }
  return quantize(out);
}

}  // namespace

std::size_t layer_channels(const Model& model, std::size_t layer) {
  const Shape shape = model.layer_output_shape(layer);
  return shape.empty() ? 0 : shape.back();
}

ActivationGrid activation_maps(Model& model, const Tensor<float>& image, std::size_t layer) {
  if (layer >= model.size()) {
    throw std::out_of_range("layer " + std::to_string(layer) + " outside model of " + std::to_string(model.size()) +
                            " layers");
  }
  Tensor<float> batch = image;
  if (image.rank() == 3) batch = reshape(image, {1, image.dim(0), image.dim(1), image.dim(2)});
  if (batch.rank() != 4 || batch.dim(0) != 1) throw DimensionError("activation_maps expects one HxWx3 image");
  const Tensor<float> out = model.forward_to(batch.detach(), layer, Mode::Eval);
  if (out.rank() != 4) throw std::invalid_argument("layer " + std::to_string(layer) + " has no spatial output");

  const std::size_t h = out.dim(1), w = out.dim(2), c = out.dim(3);
  const auto data = out.data();
  ActivationGrid grid;
  grid.layer = layer;
  grid.channels = c;
  for (std::size_t ch = 0; ch < c; ++ch) {
    float lo = data[ch], hi = data[ch];
    for (std::size_t p = 0; p < h * w; ++p) {
      lo = std::min(lo, data[p * c + ch]);
      hi = std::max(hi, data[p * c + ch]);
    }
    Image map(h, w, 1, 128);
    const bool blank = !(hi > lo);
    if (!blank) {
      const double range = static_cast<double>(hi) - lo;
      for (std::size_t p = 0; p < h * w; ++p) {
        map.pixels[p] = static_cast<std::uint8_t>(std::lround((data[p * c + ch] - lo) / range * 255.0));
      }
    }
    grid.maps.push_back(std::move(map));
    grid.blank.push_back(blank);
  }
  return grid;
}

Tensor<float> initial_input(std::size_t height, std::size_t width, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> noise(-12.7, 12.7);
  Tensor<float> x({height, width, 3});
  for (auto& v : x.mutable_data()) v = static_cast<float>(128.0 + noise(rng));
  return x;
}

Visualization filter_visualization(Model& model, std::size_t layer, std::size_t filter, const VizConfig& config) {
  if (layer >= model.size()) {
    throw std::out_of_range("layer " + std::to_string(layer) + " outside model of " + std::to_string(model.size()) +
                            " layers");
  }
  const std::size_t channels = layer_channels(model, layer);
  if (filter >= channels) {
    throw std::out_of_range("filter " + std::to_string(filter) + " outside layer with " + std::to_string(channels) +
                            " channels");
  }
  if (!(config.step_size > 0) || !(config.epsilon >= 0)) throw std::invalid_argument("step size must be positive");
  const auto& in = model.input_shape();
  const std::size_t h = config.input_size ? config.input_size : in.at(0);
  const std::size_t w = config.input_size ? config.input_size : in.at(1);

  const Tensor<float> pixels = initial_input(h, w, config.seed);
  Tensor<float> x = reshape(scale(add(pixels, Tensor<float>(pixels.shape(), -127.5f)), 1.0f / 127.5f), {1, h, w, 3});

  Visualization result;
  result.initial = quantize(pixels);
  auto current = evaluate(model, x, layer, filter);
  result.initial_loss = current.loss;
  const auto grad_is_zero = [](const Tensor<float>& g) {
    return std::all_of(g.data().begin(), g.data().end(), [](float v) { return v == 0.0f; });
  };
  if (grad_is_zero(current.gradient)) {
    result.image = result.initial;
    result.loss_trace.assign(config.steps, 0.0);
    result.zero_gradient = true;
    return result;
  }

  for (std::size_t step = 0; step < config.steps; ++step) {
    const auto g = current.gradient.data();
    double norm = 0.0;
    for (float v : g) norm += static_cast<double>(v) * v;
    norm = std::sqrt(norm);
    const double factor = config.step_size / (norm + config.epsilon);
    auto xd = x.mutable_data();
    double step_norm = 0.0;
    for (std::size_t i = 0; i < xd.size(); ++i) {
      const double delta = g[i] / (norm + config.epsilon);
      step_norm += delta * delta;
      xd[i] = static_cast<float>(xd[i] + factor * g[i]);
    }
    result.step_norms.push_back(std::sqrt(step_norm));
    current = evaluate(model, x, layer, filter);
    result.loss_trace.push_back(current.loss);
  }
  result.image = deprocess(reshape(x, {h, w, 3}));
  return result;
}

Image export_grid(const std::vector<Image>& images, std::size_t columns) {
  if (images.empty()) throw std::invalid_argument("export_grid needs at least one image");
  if (columns == 0) throw std::invalid_argument("export_grid needs at least one column");
  const std::size_t h = images.front().height, w = images.front().width;
  std::size_t channels = 1;
  for (const auto& img : images) {
    if (img.height != h || img.width != w) throw DimensionError("export_grid images must share one size");
    if (img.channels != 1 && img.channels != 3) throw DimensionError("export_grid expects 1 or 3 channel images");
    channels = std::max(channels, img.channels);
  }
  const std::size_t rows = (images.size() + columns - 1) / columns;
  Image grid(rows * (h + 2) + 2, columns * (w + 2) + 2, channels, 255);
  for (std::size_t i = 0; i < images.size(); ++i) {
    const Image tile = channels == 3 ? to_rgb(images[i]) : images[i];
    const std::size_t top = 2 + (i / columns) * (h + 2), left = 2 + (i % columns) * (w + 2);
    for (std::size_t r = 0; r < h; ++r) {
      for (std::size_t c = 0; c < w; ++c) {
        for (std::size_t ch = 0; ch < channels; ++ch) grid.at(top + r, left + c, ch) = tile.at(r, c, ch);
      }
    }
  }
  return grid;
}

void export_grid(const std::vector<Image>& images, std::size_t columns, const std::filesystem::path& path) {
  write_png(export_grid(images, columns), path);
}

}  // namespace adsnn::viz
