#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "adsnn/ops.hpp"

namespace adsnn::attn {

/// Head count and total key/value depths of a multi-head self-attention.
struct AttentionConfig {
  std::size_t heads = 4;
  std::size_t key_depth = 0;    // d_k, split evenly across heads
  std::size_t value_depth = 0;  // d_v, split evenly across heads

  std::size_t key_depth_per_head() const { return key_depth / heads; }
  std::size_t value_depth_per_head() const { return value_depth / heads; }
  bool enabled() const { return value_depth > 0; }
  void validate() const;
};

// heads = 4 and d_k = d_v = ceil(0.25 * in_channels) rounded up to a multiple of 4.
AttentionConfig default_attention_config(std::size_t in_channels);

template <typename T>
struct HeadWeights {
  Tensor<T> query;  // F_in x d_k/h
  Tensor<T> key;    // F_in x d_k/h
  Tensor<T> value;  // F_in x d_v/h
};

template <typename T>
struct AttentionWeights {
  std::vector<HeadWeights<T>> heads;
  Tensor<T> output;  // d_v x d_v

  std::size_t parameter_count() const;
};

// He-uniform initialisation for every projection.
template <typename T>
AttentionWeights<T> init_attention_weights(std::size_t in_channels, const AttentionConfig& config, std::mt19937_64& rng);

// HxWxF -> (HW)xF and BxHxWxF -> Bx(HW)xF; row index is h*W + w.
template <typename T> Tensor<T> flatten_spatial(const Tensor<T>& x);
// Inverse of flatten_spatial.
template <typename T> Tensor<T> unflatten_spatial(const Tensor<T>& x, std::size_t height, std::size_t width);

// softmax((X Wq)(X Wk)^T / sqrt(d_k/h)) for X of shape (HW)xF or Bx(HW)xF.
template <typename T>
Tensor<T> attention_weights(const Tensor<T>& x, const HeadWeights<T>& head, std::size_t key_depth_per_head);

// attention_weights(...) * (X Wv)
template <typename T>
Tensor<T> single_head_attention(const Tensor<T>& x, const HeadWeights<T>& head, std::size_t key_depth_per_head);

// Concat over heads, projected by W_O, reshaped back to HxWxd_v (or BxHxWxd_v).
template <typename T>
Tensor<T> multi_head_attention(const Tensor<T>& x, const AttentionWeights<T>& weights, const AttentionConfig& config);

// Channel concatenation of a same-padded convolution and the attention branch,
// conv channels first.
template <typename T>
Tensor<T> attention_augmented_conv(const Tensor<T>& x, const Tensor<T>& conv_kernel, const AttentionWeights<T>& weights,
                                   const AttentionConfig& config);

// Attention-map entries held per image: (HW)^2 * heads.
std::int64_t attention_memory_estimate(std::int64_t height, std::int64_t width, std::int64_t heads);

}  // namespace adsnn::attn
