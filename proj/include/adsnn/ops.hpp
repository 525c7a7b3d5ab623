#pragma once

#include <span>
#include <vector>

#include "adsnn/tensor.hpp"

namespace adsnn {

enum class Padding { Same, Valid };
enum class Mode { Train, Eval };

inline constexpr double kBatchNormEpsilon = 1e-5;
inline constexpr double kBatchNormMomentum = 0.9;

// Output extent and leading pad for one spatial axis. Same padding follows the
// TensorFlow convention (out = ceil(in / stride), extra pad goes after).
struct AxisGeometry {
  std::size_t out = 0;
  std::size_t pad_before = 0;
};
AxisGeometry conv_axis(std::size_t in, std::size_t kernel, std::size_t stride, Padding padding);

template <typename T>
struct RunningStats {
  Tensor<T> mean;
  Tensor<T> variance;

  static RunningStats fresh(std::size_t channels) {
    return {Tensor<T>(Shape{channels}, T{0}), Tensor<T>(Shape{channels}, T{1})};
  }
};

// Element-wise.
template <typename T> Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> scale(const Tensor<T>& x, T factor);
template <typename T> Tensor<T> relu(const Tensor<T>& x);

// Reductions to a scalar.
template <typename T> Tensor<T> sum(const Tensor<T>& x);
template <typename T> Tensor<T> mean(const Tensor<T>& x);

template <typename T> Tensor<T> reshape(const Tensor<T>& x, Shape shape);
template <typename T> Tensor<T> slice(const Tensor<T>& x, std::size_t axis, std::size_t begin, std::size_t end);
template <typename T> Tensor<T> concat(const std::vector<Tensor<T>>& xs, std::size_t axis);

// [m x k] * [k x n].
template <typename T> Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);
// [B x m x k] * [B x k x n], or [B x m x k] * [B x n x k]^T when transpose_b.
template <typename T> Tensor<T> batch_matmul(const Tensor<T>& a, const Tensor<T>& b, bool transpose_b = false);

// Cross-correlation over HxWxM (or BxHxWxM) input with a KhxKwxMxN kernel.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& kernel, std::size_t stride, Padding padding);
// One KhxKw filter per channel: kernel is KhxKwxM.
template <typename T>
Tensor<T> depthwise_conv2d(const Tensor<T>& input, const Tensor<T>& kernel, std::size_t stride, Padding padding);

template <typename T> Tensor<T> softmax(const Tensor<T>& x, std::size_t axis);

// Per-channel normalisation over the last axis. In train mode batch statistics
// are used and `stats` is updated with momentum kBatchNormMomentum.
template <typename T>
Tensor<T> batch_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, RunningStats<T>& stats,
                     Mode mode);

// HxWxC -> C, or BxHxWxC -> BxC.
template <typename T> Tensor<T> global_avg_pool(const Tensor<T>& x);

// x: [in] or [B x in]; weights: [in x out]; bias: [out].
template <typename T> Tensor<T> dense(const Tensor<T>& x, const Tensor<T>& weights, const Tensor<T>& bias);

// Mean over the batch of -log softmax(logits)[label].
template <typename T> Tensor<T> cross_entropy_loss(const Tensor<T>& logits, std::span<const int> labels);

}  // namespace adsnn
