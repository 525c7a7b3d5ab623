#include "adsnn/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "gemm.hpp"

namespace adsnn {
namespace {

using detail::gemm_nn;
using detail::gemm_nt;
using detail::gemm_tn;

template <typename T, typename Fn>
Tensor<T> finish(Tensor<T> out, std::initializer_list<const Tensor<T>*> inputs, std::string_view kind, Fn&& fn) {
  Tape<T>* tape = common_tape<T>(inputs);
  if (!tape) return out;
  return tape->record(std::move(out), kind, std::forward<Fn>(fn));
}

template <typename T>
void accumulate(Tape<T>& tape, const Tensor<T>& target, std::span<const T> g) {
  if (!target.on_tape()) return;
  auto dst = tape.grad_of(target.node());
  for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
}

void require_same_shape(const Shape& a, const Shape& b, const char* op) {
  if (a != b) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_string(a) + " vs " + shape_string(b));
  }
}

struct Conv2dGeometry {
  std::size_t batch, in_h, in_w, channels, k_h, k_w, stride;
  AxisGeometry rows, cols;
  bool batched;

  std::size_t positions() const { return batch * rows.out * cols.out; }
  std::size_t patch() const { return k_h * k_w * channels; }
};

Conv2dGeometry conv_geometry(const Shape& in, const Shape& kernel, std::size_t stride, Padding padding,
                             const char* op) {
  if (in.size() != 3 && in.size() != 4) {
    throw DimensionError(std::string(op) + ": input must be HxWxC or BxHxWxC, got " + shape_string(in));
  }
  if (stride == 0) throw DimensionError(std::string(op) + ": stride must be >= 1");
  const bool batched = in.size() == 4;
  const std::size_t off = batched ? 1 : 0;
  Conv2dGeometry g{};
  g.batched = batched;
  g.batch = batched ? in[0] : 1;
  g.in_h = in[off];
  g.in_w = in[off + 1];
  g.channels = in[off + 2];
  g.k_h = kernel.at(0);
  g.k_w = kernel.at(1);
  if (kernel.at(2) != g.channels) {
    throw DimensionError(std::string(op) + ": kernel " + shape_string(kernel) + " does not match input " +
                         shape_string(in));
  }
  g.stride = stride;
  try {
    g.rows = conv_axis(g.in_h, g.k_h, stride, padding);
    g.cols = conv_axis(g.in_w, g.k_w, stride, padding);
  } catch (const DimensionError&) {
    throw DimensionError(std::string(op) + ": kernel " + shape_string(kernel) + " larger than padded input " +
                         shape_string(in));
  }
  return g;
}

Shape conv_output_shape(const Conv2dGeometry& g, std::size_t channels) {
  if (g.batched) return {g.batch, g.rows.out, g.cols.out, channels};
  return {g.rows.out, g.cols.out, channels};
}

template <typename T>
void im2col(const Conv2dGeometry& g, const T* x, T* col) {
  const std::size_t c = g.channels;
  std::size_t row = 0;
  for (std::size_t b = 0; b < g.batch; ++b) {
    const T* xb = x + b * g.in_h * g.in_w * c;
    for (std::size_t oy = 0; oy < g.rows.out; ++oy) {
      for (std::size_t ox = 0; ox < g.cols.out; ++ox, ++row) {
        T* dst = col + row * g.patch();
        for (std::size_t ky = 0; ky < g.k_h; ++ky) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) - static_cast<std::ptrdiff_t>(g.rows.pad_before);
          for (std::size_t kx = 0; kx < g.k_w; ++kx, dst += c) {
            const auto ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) - static_cast<std::ptrdiff_t>(g.cols.pad_before);
            if (iy < 0 || ix < 0 || iy >= static_cast<std::ptrdiff_t>(g.in_h) || ix >= static_cast<std::ptrdiff_t>(g.in_w)) {
              std::fill(dst, dst + c, T{0});
            } else {
              const T* src = xb + (static_cast<std::size_t>(iy) * g.in_w + static_cast<std::size_t>(ix)) * c;
              std::copy(src, src + c, dst);
            }
          }
        }
      }
    }
  }
}

template <typename T>
void col2im(const Conv2dGeometry& g, const T* col, T* dx) {
  const std::size_t c = g.channels;
  std::size_t row = 0;
  for (std::size_t b = 0; b < g.batch; ++b) {
    T* xb = dx + b * g.in_h * g.in_w * c;
    for (std::size_t oy = 0; oy < g.rows.out; ++oy) {
      for (std::size_t ox = 0; ox < g.cols.out; ++ox, ++row) {
        const T* src = col + row * g.patch();
        for (std::size_t ky = 0; ky < g.k_h; ++ky) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) - static_cast<std::ptrdiff_t>(g.rows.pad_before);
          for (std::size_t kx = 0; kx < g.k_w; ++kx, src += c) {
            const auto ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) - static_cast<std::ptrdiff_t>(g.cols.pad_before);
            if (iy < 0 || ix < 0 || iy >= static_cast<std::ptrdiff_t>(g.in_h) || ix >= static_cast<std::ptrdiff_t>(g.in_w)) continue;
            T* dst = xb + (static_cast<std::size_t>(iy) * g.in_w + static_cast<std::size_t>(ix)) * c;
            for (std::size_t ch = 0; ch < c; ++ch) dst[ch] += src[ch];
          }
        }
      }
    }
  }
}

// outer x axis x inner decomposition of a shape around `axis`.
struct AxisSplit {
  std::size_t outer = 1, extent = 1, inner = 1;
};

AxisSplit split_axis(const Shape& shape, std::size_t axis, const char* op) {
  if (axis >= shape.size()) {
    throw DimensionError(std::string(op) + ": axis " + std::to_string(axis) + " invalid for shape " +
                         shape_string(shape));
  }
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.extent = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

}  // namespace

AxisGeometry conv_axis(std::size_t in, std::size_t kernel, std::size_t stride, Padding padding) {
  if (stride == 0 || kernel == 0) throw DimensionError("kernel and stride must be positive");
  AxisGeometry g;
  if (padding == Padding::Valid) {
    if (kernel > in) {
      throw DimensionError("kernel extent " + std::to_string(kernel) + " exceeds input extent " + std::to_string(in));
    }
    g.out = (in - kernel) / stride + 1;
    g.pad_before = 0;
  } else {
    g.out = (in + stride - 1) / stride;
    const std::size_t needed = (g.out - 1) * stride + kernel;
    const std::size_t total = needed > in ? needed - in : 0;
    g.pad_before = total / 2;
  }
  return g;
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a.shape(), b.shape(), "add");
  Tensor<T> out(a.shape());
  auto o = out.mutable_data();
  auto x = a.data();
  auto y = b.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] + y[i];
  return finish(std::move(out), {&a, &b}, "add", [a, b](std::span<const T> g, Tape<T>& tape) {
    accumulate(tape, a, g);
    accumulate(tape, b, g);
  });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a.shape(), b.shape(), "mul");
  Tensor<T> out(a.shape());
  auto o = out.mutable_data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = a[i] * b[i];
  return finish(std::move(out), {&a, &b}, "mul", [a, b](std::span<const T> g, Tape<T>& tape) {
    if (a.on_tape()) {
      auto da = tape.grad_of(a.node());
      for (std::size_t i = 0; i < g.size(); ++i) da[i] += g[i] * b[i];
    }
    if (b.on_tape()) {
      auto db = tape.grad_of(b.node());
      for (std::size_t i = 0; i < g.size(); ++i) db[i] += g[i] * a[i];
    }
  });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T factor) {
  Tensor<T> out(x.shape());
  auto o = out.mutable_data();
  auto in = x.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = in[i] * factor;
  return finish(std::move(out), {&x}, "scale", [x, factor](std::span<const T> g, Tape<T>& tape) {
    auto dx = tape.grad_of(x.node());
    for (std::size_t i = 0; i < g.size(); ++i) dx[i] += g[i] * factor;
  });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  Tensor<T> out(x.shape());
  auto o = out.mutable_data();
  auto in = x.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = in[i] > T{0} ? in[i] : T{0};
  return finish(std::move(out), {&x}, "relu", [x](std::span<const T> g, Tape<T>& tape) {
    auto dx = tape.grad_of(x.node());
    auto in = x.data();
    for (std::size_t i = 0; i < g.size(); ++i)
      if (in[i] > T{0}) dx[i] += g[i];
  });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  T total{0};
  for (T v : x.data()) total += v;
  return finish(Tensor<T>::scalar(total), {&x}, "sum", [x](std::span<const T> g, Tape<T>& tape) {
    auto dx = tape.grad_of(x.node());
    for (auto& v : dx) v += g[0];
  });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
  if (x.size() == 0) throw DimensionError("mean of empty tensor");
  T total{0};
  for (T v : x.data()) total += v;
  const T n = static_cast<T>(x.size());
  return finish(Tensor<T>::scalar(total / n), {&x}, "mean", [x, n](std::span<const T> g, Tape<T>& tape) {
    auto dx = tape.grad_of(x.node());
    const T share = g[0] / n;
    for (auto& v : dx) v += share;
  });
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  Tensor<T> out = x.view(std::move(shape));
  return finish(std::move(out), {&x}, "reshape", [x](std::span<const T> g, Tape<T>& tape) { accumulate(tape, x, g); });
}

template <typename T>
Tensor<T> slice(const Tensor<T>& x, std::size_t axis, std::size_t begin, std::size_t end) {
  const AxisSplit s = split_axis(x.shape(), axis, "slice");
  if (begin >= end || end > s.extent) {
    throw DimensionError("slice: range [" + std::to_string(begin) + ", " + std::to_string(end) +
                         ") invalid for shape " + shape_string(x.shape()));
  }
  Shape shape = x.shape();
  shape[axis] = end - begin;
  Tensor<T> out(shape);
  const std::size_t width = (end - begin) * s.inner;
  auto o = out.mutable_data();
  auto in = x.data();
  for (std::size_t i = 0; i < s.outer; ++i) {
    std::copy_n(in.begin() + static_cast<std::ptrdiff_t>((i * s.extent + begin) * s.inner), width,
                o.begin() + static_cast<std::ptrdiff_t>(i * width));
  }
  return finish(std::move(out), {&x}, "slice", [x, s, begin, width](std::span<const T> g, Tape<T>& tape) {
    auto dx = tape.grad_of(x.node());
    for (std::size_t i = 0; i < s.outer; ++i) {
      T* dst = dx.data() + (i * s.extent + begin) * s.inner;
      const T* src = g.data() + i * width;
      for (std::size_t j = 0; j < width; ++j) dst[j] += src[j];
    }
  });
}

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& xs, std::size_t axis) {
  if (xs.empty()) throw DimensionError("concat: no inputs");
  Shape shape = xs.front().shape();
  const AxisSplit first = split_axis(shape, axis, "concat");
  std::size_t total = 0;
  for (const auto& x : xs) {
    Shape probe = x.shape();
    if (probe.size() != shape.size()) throw DimensionError("concat: rank mismatch " + shape_string(probe));
    probe[axis] = shape[axis];
    require_same_shape(probe, shape, "concat");
    total += x.dim(axis);
  }
  shape[axis] = total;
  Tensor<T> out(shape);
  auto o = out.mutable_data();
  std::size_t offset = 0;
  for (const auto& x : xs) {
    const std::size_t width = x.dim(axis) * first.inner;
    auto in = x.data();
    for (std::size_t i = 0; i < first.outer; ++i) {
      std::copy_n(in.begin() + static_cast<std::ptrdiff_t>(i * width), width,
                  o.begin() + static_cast<std::ptrdiff_t>(i * total * first.inner + offset));
    }
    offset += width;
  }
  Tape<T>* tape = nullptr;
  for (const auto& x : xs) {
    if (!x.on_tape()) continue;
    if (tape && x.tape() != tape) throw std::invalid_argument("concat: operands on different tapes");
    tape = x.tape();
  }
  if (!tape) return out;
  const std::size_t outer = first.outer;
  const std::size_t inner = first.inner;
  return tape->record(std::move(out), "concat", [xs, outer, inner, total](std::span<const T> g, Tape<T>& tp) {
    std::size_t off = 0;
    for (const auto& x : xs) {
      const std::size_t width = x.size() / outer;
      if (x.on_tape()) {
        auto dx = tp.grad_of(x.node());
        for (std::size_t i = 0; i < outer; ++i) {
          const T* src = g.data() + i * total * inner + off;
          T* dst = dx.data() + i * width;
          for (std::size_t j = 0; j < width; ++j) dst[j] += src[j];
        }
      }
      off += width;
    }
  });
}

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw DimensionError("matmul: incompatible shapes " + shape_string(a.shape()) + " and " + shape_string(b.shape()));
  }
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor<T> out(Shape{m, n});
  gemm_nn(m, n, k, a.ptr(), b.ptr(), out.mutable_data().data());
  return finish(std::move(out), {&a, &b}, "matmul", [a, b, m, n, k](std::span<const T> g, Tape<T>& tape) {
    if (a.on_tape()) gemm_nt(m, k, n, g.data(), b.ptr(), tape.grad_of(a.node()).data());
    if (b.on_tape()) gemm_tn(m, n, k, a.ptr(), g.data(), tape.grad_of(b.node()).data());
  });
}

template <typename T>
Tensor<T> batch_matmul(const Tensor<T>& a, const Tensor<T>& b, bool transpose_b) {
  if (a.rank() != 3 || b.rank() != 3 || a.dim(0) != b.dim(0) ||
      a.dim(2) != (transpose_b ? b.dim(2) : b.dim(1))) {
    throw DimensionError("batch_matmul: incompatible shapes " + shape_string(a.shape()) + " and " +
                         shape_string(b.shape()) + (transpose_b ? " (b transposed)" : ""));
  }
  const std::size_t batch = a.dim(0), m = a.dim(1), k = a.dim(2);
  const std::size_t n = transpose_b ? b.dim(1) : b.dim(2);
  Tensor<T> out(Shape{batch, m, n});
  T* o = out.mutable_data().data();
  for (std::size_t i = 0; i < batch; ++i) {
    const T* ai = a.ptr() + i * m * k;
    const T* bi = b.ptr() + i * k * n;
    if (transpose_b) {
      gemm_nt(m, n, k, ai, bi, o + i * m * n);
    } else {
      gemm_nn(m, n, k, ai, bi, o + i * m * n);
    }
  }
  return finish(std::move(out), {&a, &b}, "batch_matmul",
                [a, b, batch, m, n, k, transpose_b](std::span<const T> g, Tape<T>& tape) {
                  T* da = a.on_tape() ? tape.grad_of(a.node()).data() : nullptr;
                  T* db = b.on_tape() ? tape.grad_of(b.node()).data() : nullptr;
                  for (std::size_t i = 0; i < batch; ++i) {
                    const T* gi = g.data() + i * m * n;
                    const T* ai = a.ptr() + i * m * k;
                    const T* bi = b.ptr() + i * k * n;
                    if (transpose_b) {
                      // c = a b^T: da = g b, db = g^T a
                      if (da) gemm_nn(m, k, n, gi, bi, da + i * m * k);
                      if (db) gemm_tn(m, k, n, gi, ai, db + i * k * n);
                    } else {
                      if (da) gemm_nt(m, k, n, gi, bi, da + i * m * k);
                      if (db) gemm_tn(m, n, k, ai, gi, db + i * k * n);
                    }
                  }
                });
}

template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& kernel, std::size_t stride, Padding padding) {
  if (kernel.rank() != 4) throw DimensionError("conv2d: kernel must be KhxKwxMxN, got " + shape_string(kernel.shape()));
  const Conv2dGeometry g = conv_geometry(input.shape(), kernel.shape(), stride, padding, "conv2d");
  const std::size_t filters = kernel.dim(3);
  const bool pointwise = g.k_h == 1 && g.k_w == 1 && stride == 1;
  Tensor<T> col = pointwise ? input.detach() : Tensor<T>(Shape{g.positions(), g.patch()});
  if (!pointwise) im2col(g, input.ptr(), col.mutable_data().data());
  Tensor<T> out(conv_output_shape(g, filters));
  gemm_nn(g.positions(), filters, g.patch(), col.ptr(), kernel.ptr(), out.mutable_data().data());
  return finish(std::move(out), {&input, &kernel}, "conv2d",
                [input, kernel, col, g, filters, pointwise](std::span<const T> grad, Tape<T>& tape) {
                  if (kernel.on_tape()) {
                    gemm_tn(g.positions(), filters, g.patch(), col.ptr(), grad.data(),
                            tape.grad_of(kernel.node()).data());
                  }
                  if (input.on_tape()) {
                    if (pointwise) {
                      gemm_nt(g.positions(), g.patch(), filters, grad.data(), kernel.ptr(),
                              tape.grad_of(input.node()).data());
                    } else {
                      std::vector<T> dcol(g.positions() * g.patch(), T{0});
                      gemm_nt(g.positions(), g.patch(), filters, grad.data(), kernel.ptr(), dcol.data());
                      col2im(g, dcol.data(), tape.grad_of(input.node()).data());
                    }
                  }
                });
}

template <typename T>
Tensor<T> depthwise_conv2d(const Tensor<T>& input, const Tensor<T>& kernel, std::size_t stride, Padding padding) {
  if (kernel.rank() != 3) {
    throw DimensionError("depthwise_conv2d: kernel must be KhxKwxM, got " + shape_string(kernel.shape()));
  }
  const Conv2dGeometry g = conv_geometry(input.shape(), kernel.shape(), stride, padding, "depthwise_conv2d");
  const std::size_t c = g.channels;
  Tensor<T> out(conv_output_shape(g, c));

  // Visits every (output pixel, kernel tap) pair that lands inside the input.
  auto for_each_tap = [g, c](auto&& body) {
    for (std::size_t b = 0; b < g.batch; ++b) {
      for (std::size_t oy = 0; oy < g.rows.out; ++oy) {
        for (std::size_t ox = 0; ox < g.cols.out; ++ox) {
          const std::size_t o = ((b * g.rows.out + oy) * g.cols.out + ox) * c;
          for (std::size_t ky = 0; ky < g.k_h; ++ky) {
            const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) - static_cast<std::ptrdiff_t>(g.rows.pad_before);
            if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.in_h)) continue;
            for (std::size_t kx = 0; kx < g.k_w; ++kx) {
              const auto ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) - static_cast<std::ptrdiff_t>(g.cols.pad_before);
              if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.in_w)) continue;
              const std::size_t i = ((b * g.in_h + static_cast<std::size_t>(iy)) * g.in_w + static_cast<std::size_t>(ix)) * c;
              body(o, i, (ky * g.k_w + kx) * c);
            }
          }
        }
      }
    }
  };

  {
    T* __restrict o = out.mutable_data().data();
    const T* x = input.ptr();
    const T* k = kernel.ptr();
    for_each_tap([&](std::size_t oi, std::size_t ii, std::size_t ki) {
      for (std::size_t ch = 0; ch < c; ++ch) o[oi + ch] += x[ii + ch] * k[ki + ch];
    });
  }
  return finish(std::move(out), {&input, &kernel}, "depthwise_conv2d",
                [input, kernel, for_each_tap, c](std::span<const T> grad, Tape<T>& tape) {
                  const T* gr = grad.data();
                  if (input.on_tape()) {
                    T* __restrict dx = tape.grad_of(input.node()).data();
                    const T* k = kernel.ptr();
                    for_each_tap([&](std::size_t oi, std::size_t ii, std::size_t ki) {
                      for (std::size_t ch = 0; ch < c; ++ch) dx[ii + ch] += gr[oi + ch] * k[ki + ch];
                    });
                  }
                  if (kernel.on_tape()) {
                    T* __restrict dk = tape.grad_of(kernel.node()).data();
                    const T* x = input.ptr();
                    for_each_tap([&](std::size_t oi, std::size_t ii, std::size_t ki) {
                      for (std::size_t ch = 0; ch < c; ++ch) dk[ki + ch] += gr[oi + ch] * x[ii + ch];
                    });
                  }
                });
}

template <typename T>
Tensor<T> softmax(const Tensor<T>& x, std::size_t axis) {
  const AxisSplit s = split_axis(x.shape(), axis, "softmax");
  Tensor<T> out(x.shape());
  auto o = out.mutable_data();
  auto in = x.data();
  for (std::size_t i = 0; i < s.outer; ++i) {
    for (std::size_t j = 0; j < s.inner; ++j) {
      const std::size_t base = i * s.extent * s.inner + j;
      T peak = in[base];
      for (std::size_t e = 1; e < s.extent; ++e) peak = std::max(peak, in[base + e * s.inner]);
      T total{0};
      for (std::size_t e = 0; e < s.extent; ++e) {
        const T v = std::exp(in[base + e * s.inner] - peak);
        o[base + e * s.inner] = v;
        total += v;
      }
      for (std::size_t e = 0; e < s.extent; ++e) o[base + e * s.inner] /= total;
    }
  }
  Tensor<T> y = out.detach();
  return finish(std::move(out), {&x}, "softmax", [x, y, s](std::span<const T> g, Tape<T>& tape) {
    auto dx = tape.grad_of(x.node());
    auto yv = y.data();
    for (std::size_t i = 0; i < s.outer; ++i) {
      for (std::size_t j = 0; j < s.inner; ++j) {
        const std::size_t base = i * s.extent * s.inner + j;
        T dot{0};
        for (std::size_t e = 0; e < s.extent; ++e) dot += g[base + e * s.inner] * yv[base + e * s.inner];
        for (std::size_t e = 0; e < s.extent; ++e) {
          const std::size_t idx = base + e * s.inner;
          dx[idx] += yv[idx] * (g[idx] - dot);
        }
      }
    }
  });
}

template <typename T>
Tensor<T> batch_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, RunningStats<T>& stats,
                     Mode mode) {
  if (x.rank() == 0) throw DimensionError("batch_norm: scalar input");
  const std::size_t c = x.shape().back();
  const Shape channel_shape{c};
  require_same_shape(gamma.shape(), channel_shape, "batch_norm gamma");
  require_same_shape(beta.shape(), channel_shape, "batch_norm beta");
  require_same_shape(stats.mean.shape(), channel_shape, "batch_norm running mean");
  require_same_shape(stats.variance.shape(), channel_shape, "batch_norm running variance");
  const std::size_t n = x.size() / c;
  if (n == 0) throw DimensionError("batch_norm: empty input");

  std::vector<T> mu(c), inv_std(c);
  auto in = x.data();
  if (mode == Mode::Train) {
    std::vector<double> s1(c, 0.0), s2(c, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      const T* row = in.data() + i * c;
      for (std::size_t ch = 0; ch < c; ++ch) s1[ch] += row[ch];
    }
    for (std::size_t ch = 0; ch < c; ++ch) s1[ch] /= static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) {
      const T* row = in.data() + i * c;
      for (std::size_t ch = 0; ch < c; ++ch) {
        const double d = row[ch] - s1[ch];
        s2[ch] += d * d;
      }
    }
    auto rm = stats.mean.mutable_data();
    auto rv = stats.variance.mutable_data();
    for (std::size_t ch = 0; ch < c; ++ch) {
      const double var = s2[ch] / static_cast<double>(n);
      mu[ch] = static_cast<T>(s1[ch]);
      inv_std[ch] = static_cast<T>(1.0 / std::sqrt(var + kBatchNormEpsilon));
      rm[ch] = static_cast<T>(kBatchNormMomentum * rm[ch] + (1.0 - kBatchNormMomentum) * s1[ch]);
      rv[ch] = static_cast<T>(kBatchNormMomentum * rv[ch] + (1.0 - kBatchNormMomentum) * var);
    }
  } else {
    for (std::size_t ch = 0; ch < c; ++ch) {
      mu[ch] = stats.mean[ch];
      inv_std[ch] = static_cast<T>(1.0 / std::sqrt(static_cast<double>(stats.variance[ch]) + kBatchNormEpsilon));
    }
  }

  Tensor<T> xhat(x.shape());
  Tensor<T> out(x.shape());
  {
    T* xh = xhat.mutable_data().data();
    T* o = out.mutable_data().data();
    const T* gm = gamma.ptr();
    const T* bt = beta.ptr();
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t ch = 0; ch < c; ++ch) {
        const std::size_t idx = i * c + ch;
        xh[idx] = (in[idx] - mu[ch]) * inv_std[ch];
        o[idx] = gm[ch] * xh[idx] + bt[ch];
      }
    }
  }
  const bool train = mode == Mode::Train;
  return finish(std::move(out), {&x, &gamma, &beta}, "batch_norm",
                [x, gamma, beta, xhat, inv_std, n, c, train](std::span<const T> g, Tape<T>& tape) {
                  std::vector<T> dgamma(c, T{0}), dbeta(c, T{0});
                  const T* xh = xhat.ptr();
                  for (std::size_t i = 0; i < n; ++i) {
                    for (std::size_t ch = 0; ch < c; ++ch) {
                      dgamma[ch] += g[i * c + ch] * xh[i * c + ch];
                      dbeta[ch] += g[i * c + ch];
                    }
                  }
                  accumulate(tape, gamma, std::span<const T>(dgamma));
                  accumulate(tape, beta, std::span<const T>(dbeta));
                  if (!x.on_tape()) return;
                  auto dx = tape.grad_of(x.node());
                  const T* gm = gamma.ptr();
                  if (!train) {
                    for (std::size_t i = 0; i < n; ++i)
                      for (std::size_t ch = 0; ch < c; ++ch) dx[i * c + ch] += g[i * c + ch] * gm[ch] * inv_std[ch];
                    return;
                  }
                  // dx = inv_std / n * (n*dxhat - sum(dxhat) - xhat * sum(dxhat*xhat)), dxhat = g*gamma
                  const T count = static_cast<T>(n);
                  for (std::size_t i = 0; i < n; ++i) {
                    for (std::size_t ch = 0; ch < c; ++ch) {
                      const std::size_t idx = i * c + ch;
                      const T dxhat = g[idx] * gm[ch];
                      dx[idx] += inv_std[ch] / count *
                                 (count * dxhat - dbeta[ch] * gm[ch] - xh[idx] * dgamma[ch] * gm[ch]);
                    }
                  }
                });
}

template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& x) {
  if (x.rank() != 3 && x.rank() != 4) {
    throw DimensionError("global_avg_pool: expected HxWxC or BxHxWxC, got " + shape_string(x.shape()));
  }
  const bool batched = x.rank() == 4;
  const std::size_t batch = batched ? x.dim(0) : 1;
  const std::size_t c = x.shape().back();
  const std::size_t hw = x.size() / (batch * c);
  Tensor<T> out(batched ? Shape{batch, c} : Shape{c});
  auto o = out.mutable_data();
  auto in = x.data();
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t p = 0; p < hw; ++p)
      for (std::size_t ch = 0; ch < c; ++ch) o[b * c + ch] += in[(b * hw + p) * c + ch];
    for (std::size_t ch = 0; ch < c; ++ch) o[b * c + ch] /= static_cast<T>(hw);
  }
  return finish(std::move(out), {&x}, "global_avg_pool", [x, batch, c, hw](std::span<const T> g, Tape<T>& tape) {
    auto dx = tape.grad_of(x.node());
    const T inv = T{1} / static_cast<T>(hw);
    for (std::size_t b = 0; b < batch; ++b)
      for (std::size_t p = 0; p < hw; ++p)
        for (std::size_t ch = 0; ch < c; ++ch) dx[(b * hw + p) * c + ch] += g[b * c + ch] * inv;
  });
}

template <typename T>
Tensor<T> dense(const Tensor<T>& x, const Tensor<T>& weights, const Tensor<T>& bias) {
  if (weights.rank() != 2 || bias.rank() != 1 || bias.dim(0) != weights.dim(1) ||
      (x.rank() != 1 && x.rank() != 2) || x.shape().back() != weights.dim(0)) {
    throw DimensionError("dense: incompatible shapes x=" + shape_string(x.shape()) + " W=" +
                         shape_string(weights.shape()) + " b=" + shape_string(bias.shape()));
  }
  const std::size_t rows = x.rank() == 2 ? x.dim(0) : 1;
  const std::size_t in = weights.dim(0), outs = weights.dim(1);
  Tensor<T> out(x.rank() == 2 ? Shape{rows, outs} : Shape{outs});
  T* o = out.mutable_data().data();
  for (std::size_t r = 0; r < rows; ++r) std::copy_n(bias.ptr(), outs, o + r * outs);
  gemm_nn(rows, outs, in, x.ptr(), weights.ptr(), o);
  return finish(std::move(out), {&x, &weights, &bias}, "dense",
                [x, weights, bias, rows, in, outs](std::span<const T> g, Tape<T>& tape) {
                  if (x.on_tape()) gemm_nt(rows, in, outs, g.data(), weights.ptr(), tape.grad_of(x.node()).data());
                  if (weights.on_tape()) gemm_tn(rows, outs, in, x.ptr(), g.data(), tape.grad_of(weights.node()).data());
                  if (bias.on_tape()) {
                    auto db = tape.grad_of(bias.node());
                    for (std::size_t r = 0; r < rows; ++r)
                      for (std::size_t j = 0; j < outs; ++j) db[j] += g[r * outs + j];
                  }
                });
}

template <typename T>
Tensor<T> cross_entropy_loss(const Tensor<T>& logits, std::span<const int> labels) {
  if (logits.rank() != 2 || logits.dim(0) != labels.size() || logits.dim(0) == 0) {
    throw DimensionError("cross_entropy_loss: logits " + shape_string(logits.shape()) + " with " +
                         std::to_string(labels.size()) + " labels");
  }
  const std::size_t batch = logits.dim(0), classes = logits.dim(1);
  for (int label : labels) {
    if (label < 0 || static_cast<std::size_t>(label) >= classes) {
      throw std::out_of_range("cross_entropy_loss: label " + std::to_string(label) + " outside [0, " +
                              std::to_string(classes) + ")");
    }
  }
  std::vector<T> probs(batch * classes);
  T total{0};
  auto z = logits.data();
  for (std::size_t b = 0; b < batch; ++b) {
    const T* row = z.data() + b * classes;
    const T peak = *std::max_element(row, row + classes);
    T denom{0};
    for (std::size_t j = 0; j < classes; ++j) denom += std::exp(row[j] - peak);
    const T log_denom = std::log(denom) + peak;
    for (std::size_t j = 0; j < classes; ++j) probs[b * classes + j] = std::exp(row[j] - log_denom);
    total += log_denom - row[labels[b]];
  }
  std::vector<int> targets(labels.begin(), labels.end());
  return finish(Tensor<T>::scalar(total / static_cast<T>(batch)), {&logits}, "cross_entropy",
                [logits, probs = std::move(probs), targets = std::move(targets), batch, classes](
                    std::span<const T> g, Tape<T>& tape) {
                  auto dz = tape.grad_of(logits.node());
                  const T s = g[0] / static_cast<T>(batch);
                  for (std::size_t b = 0; b < batch; ++b) {
                    for (std::size_t j = 0; j < classes; ++j) {
                      const T onehot = static_cast<int>(j) == targets[b] ? T{1} : T{0};
                      dz[b * classes + j] += s * (probs[b * classes + j] - onehot);
                    }
                  }
                });
}

#define ADSNN_INSTANTIATE_OPS(T)                                                                           \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                            \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                                            \
  template Tensor<T> scale(const Tensor<T>&, T);                                                         \
  template Tensor<T> relu(const Tensor<T>&);                                                             \
  template Tensor<T> sum(const Tensor<T>&);                                                              \
  template Tensor<T> mean(const Tensor<T>&);                                                             \
  template Tensor<T> reshape(const Tensor<T>&, Shape);                                                   \
  template Tensor<T> slice(const Tensor<T>&, std::size_t, std::size_t, std::size_t);                     \
  template Tensor<T> concat(const std::vector<Tensor<T>>&, std::size_t);                                 \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                                         \
  template Tensor<T> batch_matmul(const Tensor<T>&, const Tensor<T>&, bool);                             \
  template Tensor<T> conv2d(const Tensor<T>&, const Tensor<T>&, std::size_t, Padding);                   \
  template Tensor<T> depthwise_conv2d(const Tensor<T>&, const Tensor<T>&, std::size_t, Padding);         \
  template Tensor<T> softmax(const Tensor<T>&, std::size_t);                                             \
  template Tensor<T> batch_norm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, RunningStats<T>&, \
                                Mode);                                                                   \
  template Tensor<T> global_avg_pool(const Tensor<T>&);                                                  \
  template Tensor<T> dense(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);                        \
  template Tensor<T> cross_entropy_loss(const Tensor<T>&, std::span<const int>);

ADSNN_INSTANTIATE_OPS(float)
ADSNN_INSTANTIATE_OPS(double)

}  // namespace adsnn
