#pragma once

// Central finite-difference oracle for Tape::backward. Independent of the
// backward implementations: it only evaluates forward passes.

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "adsnn/ops.hpp"

namespace adsnn::testing {

using Inputs = std::vector<Tensor<double>>;
using ScalarFn = std::function<Tensor<double>(const Inputs&)>;

inline Tensor<double> random_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> dist(lo, hi);
  Tensor<double> t(std::move(shape));
  for (auto& v : t.mutable_data()) v = dist(rng);
  return t;
}

// Reduces any output to a scalar with fixed random weights so every output
// element contributes a distinct gradient.
inline Tensor<double> weighted_sum(const Tensor<double>& out, std::uint64_t seed = 99) {
  std::mt19937_64 rng(seed);
  Tensor<double> w = random_tensor(out.shape(), rng);
  return sum(mul(out, w));
}

// |analytic - numeric| / max(|analytic|, |numeric|, 1e-4); entries smaller than
// 1e-4 are effectively compared with an absolute tolerance.
inline double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-4});
}

// Maximum relative error over all input entries.
inline double gradcheck(const ScalarFn& fn, Inputs inputs, double step = 1e-5) {
  std::vector<Tensor<double>> analytic;
  {
    Tape<double> tape;
    Inputs watched;
    for (const auto& x : inputs) watched.push_back(tape.watch(x));
    const Tensor<double> loss = fn(watched);
    const auto grads = tape.backward(loss);
    for (const auto& w : watched) analytic.push_back(grads[w].clone());
  }
  double worst = 0.0;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    auto data = inputs[i].mutable_data();
    for (std::size_t j = 0; j < data.size(); ++j) {
      const double saved = data[j];
      data[j] = saved + step;
      const double up = fn(inputs).item();
      data[j] = saved - step;
      const double down = fn(inputs).item();
      data[j] = saved;
      const double numeric = (up - down) / (2.0 * step);
      worst = std::max(worst, relative_error(analytic[i][j], numeric));
    }
  }
  return worst;
}

}  // namespace adsnn::testing
