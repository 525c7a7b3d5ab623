#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>

#include <boost/rational.hpp>

#include "adsnn/ops.hpp"

namespace adsnn {

using Rational = boost::rational<std::int64_t>;

class OverflowError : public std::overflow_error {
 public:
  using std::overflow_error::overflow_error;
};

namespace conv {

/// Symbols of the multiply-accumulate cost model. `output_size` (D_G) is carried
/// for bookkeeping; the cost formulas use the input extent D_F throughout.
struct CostParams {
  std::int64_t kernel_size = 1;     // D_K
  std::int64_t in_channels = 1;     // M
  std::int64_t out_channels = 1;    // N
  std::int64_t input_size = 1;      // D_F
  std::int64_t output_size = 1;     // D_G

  void validate() const;
};

// D_K * D_K * M * N * D_F * D_F
std::int64_t cost_standard(const CostParams& p);
// D_K * D_K * M * D_F * D_F
std::int64_t cost_depthwise(const CostParams& p);
// M * N * D_F * D_F
std::int64_t cost_pointwise(const CostParams& p);
// depthwise + pointwise
std::int64_t cost_dws(const CostParams& p);
// cost_dws / cost_standard as an exact fraction; equals 1/N + 1/D_K^2.
Rational cost_reduction(const CostParams& p);

template <typename T>
struct BatchNormParams {
  Tensor<T> gamma;
  Tensor<T> beta;
  RunningStats<T> stats;

  static BatchNormParams identity(std::size_t channels) {
    return {Tensor<T>(Shape{channels}, T{1}), Tensor<T>(Shape{channels}, T{0}), RunningStats<T>::fresh(channels)};
  }
};

/// Weights of one depthwise-separable block. Either normalisation may be left
/// empty, in which case that stage is skipped.
template <typename T>
struct DwsBlockParams {
  Tensor<T> depthwise;   // Dk x Dk x M
  Tensor<T> pointwise;   // 1 x 1 x M x N
  std::optional<BatchNormParams<T>> depthwise_norm;
  std::optional<BatchNormParams<T>> pointwise_norm;
  std::size_t stride = 1;

  std::size_t in_channels() const { return depthwise.dim(2); }
  std::size_t out_channels() const { return pointwise.dim(3); }
  std::size_t parameter_count() const;
};

// depthwise -> BN -> ReLU -> pointwise -> BN -> ReLU
template <typename T>
Tensor<T> dws_block_forward(const Tensor<T>& x, DwsBlockParams<T>& params, Mode mode);

extern template Tensor<float> dws_block_forward(const Tensor<float>&, DwsBlockParams<float>&, Mode);
extern template Tensor<double> dws_block_forward(const Tensor<double>&, DwsBlockParams<double>&, Mode);

}  // namespace conv
}  // namespace adsnn
