#include "adsnn/attention.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "adsnn/conv_layers.hpp"

namespace adsnn::attn {
namespace {

template <typename T>
Tensor<T> he_uniform(Shape shape, std::size_t fan_in, std::mt19937_64& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in));
  std::uniform_real_distribution<double> dist(-limit, limit);
  Tensor<T> t(std::move(shape));
  for (auto& v : t.mutable_data()) v = static_cast<T>(dist(rng));
  return t;
}

// Rank-2 (n x F) inputs are treated as a batch of one.
template <typename T>
Tensor<T> as_batched(const Tensor<T>& x) {
  if (x.rank() == 2) return reshape(x, Shape{1, x.dim(0), x.dim(1)});
  if (x.rank() == 3) return x;
  throw DimensionError("attention expects (HW)xF or Bx(HW)xF, got " + shape_string(x.shape()));
}

template <typename T>
Tensor<T> project(const Tensor<T>& x3, const Tensor<T>& w) {
  const std::size_t b = x3.dim(0), n = x3.dim(1);
  Tensor<T> flat = reshape(x3, Shape{b * n, x3.dim(2)});
  return reshape(matmul(flat, w), Shape{b, n, w.dim(1)});
}

}  // namespace

void AttentionConfig::validate() const {
  if (heads == 0) throw std::invalid_argument("attention needs at least one head");
  if (key_depth % heads != 0 || value_depth % heads != 0) {
    throw std::invalid_argument("attention depths d_k=" + std::to_string(key_depth) + ", d_v=" +
                                std::to_string(value_depth) + " must be divisible by " + std::to_string(heads) +
                                " heads");
  }
  if (value_depth > 0 && key_depth == 0) throw std::invalid_argument("attention key depth must be positive");
}

AttentionConfig default_attention_config(std::size_t in_channels) {
  AttentionConfig cfg;
  cfg.heads = 4;
  std::size_t depth = (in_channels + 3) / 4;
  depth = (depth + cfg.heads - 1) / cfg.heads * cfg.heads;
  cfg.key_depth = depth;
  cfg.value_depth = depth;
  return cfg;
}

template <typename T>
std::size_t AttentionWeights<T>::parameter_count() const {
  std::size_t n = output.size();
  for (const auto& h : heads) n += h.query.size() + h.key.size() + h.value.size();
  return n;
}

template <typename T>
AttentionWeights<T> init_attention_weights(std::size_t in_channels, const AttentionConfig& config,
                                           std::mt19937_64& rng) {
  config.validate();
  AttentionWeights<T> w;
  if (!config.enabled()) return w;
  const std::size_t dk = config.key_depth_per_head(), dv = config.value_depth_per_head();
  for (std::size_t h = 0; h < config.heads; ++h) {
    HeadWeights<T> head;
    head.query = he_uniform<T>({in_channels, dk}, in_channels, rng);
    head.key = he_uniform<T>({in_channels, dk}, in_channels, rng);
    head.value = he_uniform<T>({in_channels, dv}, in_channels, rng);
    w.heads.push_back(std::move(head));
  }
  w.output = he_uniform<T>({config.value_depth, config.value_depth}, config.value_depth, rng);
  return w;
}

template <typename T>
Tensor<T> flatten_spatial(const Tensor<T>& x) {
  if (x.rank() == 3) return reshape(x, Shape{x.dim(0) * x.dim(1), x.dim(2)});
  if (x.rank() == 4) return reshape(x, Shape{x.dim(0), x.dim(1) * x.dim(2), x.dim(3)});
  throw DimensionError("flatten_spatial expects HxWxF or BxHxWxF, got " + shape_string(x.shape()));
}

template <typename T>
Tensor<T> unflatten_spatial(const Tensor<T>& x, std::size_t height, std::size_t width) {
  if (x.rank() == 2 && x.dim(0) == height * width) return reshape(x, Shape{height, width, x.dim(1)});
  if (x.rank() == 3 && x.dim(1) == height * width) return reshape(x, Shape{x.dim(0), height, width, x.dim(2)});
  throw DimensionError("unflatten_spatial: " + shape_string(x.shape()) + " does not hold " + std::to_string(height) +
                       "x" + std::to_string(width) + " positions");
}

template <typename T>
Tensor<T> attention_weights(const Tensor<T>& x, const HeadWeights<T>& head, std::size_t key_depth_per_head) {
  if (key_depth_per_head == 0) throw std::invalid_argument("attention key depth per head must be positive");
  const Tensor<T> x3 = as_batched(x);
  const Tensor<T> q = project(x3, head.query);
  const Tensor<T> k = project(x3, head.key);
  const T inv_sqrt = static_cast<T>(1.0 / std::sqrt(static_cast<double>(key_depth_per_head)));
  Tensor<T> weights = softmax(scale(batch_matmul(q, k, true), inv_sqrt), 2);
  if (x.rank() == 2) return reshape(weights, Shape{weights.dim(1), weights.dim(2)});
  return weights;
}

template <typename T>
Tensor<T> single_head_attention(const Tensor<T>& x, const HeadWeights<T>& head, std::size_t key_depth_per_head) {
  const Tensor<T> x3 = as_batched(x);
  const Tensor<T> weights = attention_weights(x3, head, key_depth_per_head);
  Tensor<T> out = batch_matmul(weights, project(x3, head.value));
  if (x.rank() == 2) return reshape(out, Shape{out.dim(1), out.dim(2)});
  return out;
}

template <typename T>
Tensor<T> multi_head_attention(const Tensor<T>& x, const AttentionWeights<T>& weights, const AttentionConfig& config) {
  config.validate();
  if (x.rank() != 3 && x.rank() != 4) {
    throw DimensionError("multi_head_attention expects HxWxF or BxHxWxF, got " + shape_string(x.shape()));
  }
  if (weights.heads.size() != config.heads) {
    throw std::invalid_argument("attention weights hold " + std::to_string(weights.heads.size()) +
                                " heads, config expects " + std::to_string(config.heads));
  }
  const bool batched = x.rank() == 4;
  const std::size_t batch = batched ? x.dim(0) : 1;
  const std::size_t height = x.dim(batched ? 1 : 0), width = x.dim(batched ? 2 : 1);
  const Tensor<T> flat = reshape(x, Shape{batch, height * width, x.shape().back()});
  std::vector<Tensor<T>> outputs;
  outputs.reserve(config.heads);
  for (const auto& head : weights.heads) outputs.push_back(single_head_attention(flat, head, config.key_depth_per_head()));
  Tensor<T> joined = outputs.size() == 1 ? outputs.front() : concat(outputs, 2);
  Tensor<T> projected = matmul(reshape(joined, Shape{batch * height * width, config.value_depth}), weights.output);
  if (batched) return reshape(projected, Shape{batch, height, width, config.value_depth});
  return reshape(projected, Shape{height, width, config.value_depth});
}

template <typename T>
Tensor<T> attention_augmented_conv(const Tensor<T>& x, const Tensor<T>& conv_kernel, const AttentionWeights<T>& weights,
                                   const AttentionConfig& config) {
  Tensor<T> conv_out = conv2d(x, conv_kernel, 1, Padding::Same);
  if (!config.enabled()) return conv_out;
  Tensor<T> attn_out = multi_head_attention(x, weights, config);
  const std::size_t channel_axis = x.rank() - 1;
  for (std::size_t axis = 0; axis < channel_axis; ++axis) {
    if (conv_out.dim(axis) != attn_out.dim(axis)) {
      throw DimensionError("attention-augmented conv: branch shapes " + shape_string(conv_out.shape()) + " and " +
                           shape_string(attn_out.shape()) + " disagree spatially");
    }
  }
  return concat(std::vector<Tensor<T>>{conv_out, attn_out}, channel_axis);
}

std::int64_t attention_memory_estimate(std::int64_t height, std::int64_t width, std::int64_t heads) {
  if (height < 1 || width < 1 || heads < 1) throw std::invalid_argument("attention memory estimate needs positive sizes");
  std::int64_t positions = 0, squared = 0, total = 0;
  if (__builtin_mul_overflow(height, width, &positions) || __builtin_mul_overflow(positions, positions, &squared) ||
      __builtin_mul_overflow(squared, heads, &total)) {
    throw OverflowError("attention memory estimate exceeds 64-bit range");
  }
  return total;
}

#define ADSNN_INSTANTIATE_ATTENTION(T)                                                                          \
  template struct AttentionWeights<T>;                                                                        \
  template AttentionWeights<T> init_attention_weights(std::size_t, const AttentionConfig&, std::mt19937_64&); \
  template Tensor<T> flatten_spatial(const Tensor<T>&);                                                       \
  template Tensor<T> unflatten_spatial(const Tensor<T>&, std::size_t, std::size_t);                           \
  template Tensor<T> attention_weights(const Tensor<T>&, const HeadWeights<T>&, std::size_t);                 \
  template Tensor<T> single_head_attention(const Tensor<T>&, const HeadWeights<T>&, std::size_t);             \
  template Tensor<T> multi_head_attention(const Tensor<T>&, const AttentionWeights<T>&, const AttentionConfig&); \
  template Tensor<T> attention_augmented_conv(const Tensor<T>&, const Tensor<T>&, const AttentionWeights<T>&, \
                                              const AttentionConfig&);

ADSNN_INSTANTIATE_ATTENTION(float)
ADSNN_INSTANTIATE_ATTENTION(double)

}  // namespace adsnn::attn
