#include "adsnn/conv_layers.hpp"

#include <string>

namespace adsnn::conv {
namespace {

std::int64_t checked_product(std::initializer_list<std::int64_t> factors) {
  std::int64_t acc = 1;
  for (std::int64_t f : factors) {
    if (__builtin_mul_overflow(acc, f, &acc)) throw OverflowError("cost exceeds 64-bit range");
  }
  return acc;
}

}  // namespace

void CostParams::validate() const {
  if (kernel_size < 1 || in_channels < 1 || out_channels < 1 || input_size < 1 || output_size < 1) {
    throw std::invalid_argument("cost parameters must all be >= 1");
  }
}

std::int64_t cost_standard(const CostParams& p) {
  p.validate();
  return checked_product({p.kernel_size, p.kernel_size, p.in_channels, p.out_channels, p.input_size, p.input_size});
}

std::int64_t cost_depthwise(const CostParams& p) {
  p.validate();
  return checked_product({p.kernel_size, p.kernel_size, p.in_channels, p.input_size, p.input_size});
}

std::int64_t cost_pointwise(const CostParams& p) {
  p.validate();
  return checked_product({p.in_channels, p.out_channels, p.input_size, p.input_size});
}

std::int64_t cost_dws(const CostParams& p) {
  std::int64_t total = 0;
  if (__builtin_add_overflow(cost_depthwise(p), cost_pointwise(p), &total)) {
    throw OverflowError("cost exceeds 64-bit range");
  }
  return total;
}

Rational cost_reduction(const CostParams& p) { return Rational(cost_dws(p), cost_standard(p)); }

template <typename T>
std::size_t DwsBlockParams<T>::parameter_count() const {
  std::size_t n = depthwise.size() + pointwise.size();
  if (depthwise_norm) n += 4 * in_channels();
  if (pointwise_norm) n += 4 * out_channels();
  return n;
}

template <typename T>
Tensor<T> dws_block_forward(const Tensor<T>& x, DwsBlockParams<T>& params, Mode mode) {
  if (params.pointwise.rank() != 4 || params.pointwise.dim(0) != 1 || params.pointwise.dim(1) != 1 ||
      params.pointwise.dim(2) != params.in_channels()) {
    throw DimensionError("dws block: pointwise kernel " + shape_string(params.pointwise.shape()) +
                         " does not follow depthwise kernel " + shape_string(params.depthwise.shape()));
  }
  Tensor<T> h = depthwise_conv2d(x, params.depthwise, params.stride, Padding::Same);
  if (auto& bn = params.depthwise_norm) h = batch_norm(h, bn->gamma, bn->beta, bn->stats, mode);
  h = relu(h);
  h = conv2d(h, params.pointwise, 1, Padding::Same);
  if (auto& bn = params.pointwise_norm) h = batch_norm(h, bn->gamma, bn->beta, bn->stats, mode);
  return relu(h);
}

template struct DwsBlockParams<float>;
template struct DwsBlockParams<double>;
template Tensor<float> dws_block_forward(const Tensor<float>&, DwsBlockParams<float>&, Mode);
template Tensor<double> dws_block_forward(const Tensor<double>&, DwsBlockParams<double>&, Mode);

}  // namespace adsnn::conv
