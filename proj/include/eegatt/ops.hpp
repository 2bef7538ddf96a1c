#pragma once

// Differentiable ops used by the Attention-CNN. Layouts follow the model:
// activations are [B, J, F, T] (batch, electrode, feature, time) and every
// temporal op treats all leading axes as independent signals.

#include <Eigen/Core>

#include <algorithm>
#include <limits>
#include <optional>

#include "eegatt/tensor.hpp"

namespace eegatt {

namespace detail {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapMat = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMapMat = Eigen::Map<const RowMat<T>>;

// Sum of f(i) for i in [0, n) in a fixed lane order. The order does not
// depend on pointer alignment, so results are reproducible across runs.
template <typename T, typename F>
T lane_reduce(std::size_t n, F f) {
  constexpr std::size_t L = 16;
  T acc[L] = {};
  std::size_t i = 0;
  for (; i + L <= n; i += L) {
    for (std::size_t l = 0; l < L; ++l) acc[l] += f(i + l);
  }
  for (std::size_t l = 0; i < n; ++i, ++l) acc[l] += f(i);
  for (std::size_t w = L / 2; w > 0; w /= 2) {
    for (std::size_t l = 0; l < w; ++l) acc[l] += acc[l + w];
  }
  return acc[0];
}

inline std::size_t leading(const Shape& s, std::size_t trailing) {
  std::size_t n = 1;
  for (std::size_t i = 0; i + trailing < s.size(); ++i) n *= s[i];
  return n;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Temporal convolution

struct ConvPadding {
  std::size_t left = 0;
  std::size_t right = 0;

  static ConvPadding symmetric(std::size_t p) { return {p, p}; }
  // Output length equals input length at stride 1, for odd and even kernels.
  static ConvPadding same(std::size_t kernel) { return {(kernel - 1) / 2, kernel / 2}; }
};

inline std::size_t conv_out_length(std::size_t t, std::size_t k, std::size_t stride, ConvPadding pad) {
  const std::size_t padded = t + pad.left + pad.right;
  if (k > padded) return 0;
  return (padded - k) / stride + 1;
}

namespace detail {

// Output positions t in [lo, hi) read an in-range input sample for tap k.
inline std::pair<std::size_t, std::size_t> valid_range(std::size_t k, std::size_t t_in, std::size_t t_out,
                                                       std::size_t stride, ConvPadding pad) {
  // pos = t*stride + k - pad.left must lie in [0, t_in).
  std::size_t lo = 0;
  if (k < pad.left) lo = (pad.left - k + stride - 1) / stride;
  std::size_t hi = 0;
  if (t_in + pad.left > k) hi = std::min(t_out, (t_in + pad.left - k - 1) / stride + 1);
  return {std::min(lo, hi), hi};
}

// col[(c,k), n*t_out + t] = in[n, c, t*stride + k - pad.left]
template <typename T>
void im2col(const T* in, T* col, std::size_t n_sig, std::size_t channels, std::size_t t_in,
            std::size_t k_size, std::size_t t_out, std::size_t stride, ConvPadding pad) {
  const std::size_t cols = n_sig * t_out;
  for (std::size_t c = 0; c < channels; ++c) {
    for (std::size_t k = 0; k < k_size; ++k) {
      const auto [lo, hi] = valid_range(k, t_in, t_out, stride, pad);
      T* row = col + (c * k_size + k) * cols;
      for (std::size_t n = 0; n < n_sig; ++n) {
        const T* src = in + (n * channels + c) * t_in;
        T* dst = row + n * t_out;
        std::fill(dst, dst + lo, T(0));
        if (lo < hi) {
          const T* first = src + (lo * stride + k - pad.left);
          if (stride == 1) {
            std::copy(first, first + (hi - lo), dst + lo);
          } else {
            for (std::size_t t = lo; t < hi; ++t) dst[t] = first[(t - lo) * stride];
          }
        }
        std::fill(dst + hi, dst + t_out, T(0));
      }
    }
  }
}

template <typename T>
void col2im(const T* col, T* in_grad, std::size_t n_sig, std::size_t channels, std::size_t t_in,
            std::size_t k_size, std::size_t t_out, std::size_t stride, ConvPadding pad) {
  const std::size_t cols = n_sig * t_out;
  for (std::size_t c = 0; c < channels; ++c) {
    for (std::size_t k = 0; k < k_size; ++k) {
      const auto [lo, hi] = valid_range(k, t_in, t_out, stride, pad);
      const T* row = col + (c * k_size + k) * cols;
      for (std::size_t n = 0; n < n_sig; ++n) {
        if (lo >= hi) continue;
        T* first = in_grad + (n * channels + c) * t_in + (lo * stride + k - pad.left);
        const T* src = row + n * t_out;
        for (std::size_t t = lo; t < hi; ++t) first[(t - lo) * stride] += src[t];
      }
    }
  }
}

}  // namespace detail

// input [..., C_in, T], kernel [C_out, C_in, K], bias [C_out] -> [..., C_out, T'].
// The kernel is shared by every leading index, so electrodes are never mixed.
template <typename T>
Tensor<T> conv1d_time(const Tensor<T>& input, const Tensor<T>& kernel, const Tensor<T>& bias,
                      std::size_t stride, ConvPadding pad) {
  if (input.rank() < 2 || kernel.rank() != 3) throw ShapeError("conv1d_time: bad ranks");
  if (stride < 1) throw ShapeError("conv1d_time: stride must be >= 1");
  const std::size_t c_in = input.dim(input.rank() - 2);
  const std::size_t t_in = input.dim(input.rank() - 1);
  const std::size_t c_out = kernel.dim(0), k_size = kernel.dim(2);
  if (kernel.dim(1) != c_in) {
    throw ShapeError("conv1d_time: kernel " + shape_str(kernel.shape()) + " vs input " +
                     shape_str(input.shape()));
  }
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != c_out)) {
    throw ShapeError("conv1d_time: bias shape " + shape_str(bias.shape()));
  }
  const std::size_t t_out = conv_out_length(t_in, k_size, stride, pad);
  if (t_out < 1) throw ShapeError("conv1d_time: output length < 1");
  const std::size_t n_sig = detail::leading(input.shape(), 2);
  const std::size_t ck = c_in * k_size;
  // Signals per im2col chunk, bounding the column buffer to ~16M entries.
  const std::size_t chunk = std::max<std::size_t>(1, (std::size_t{1} << 18) / std::max<std::size_t>(1, ck * t_out));

  std::vector<T> out(n_sig * c_out * t_out);
  {
    std::vector<T> col;
    detail::RowMat<T> prod;
    for (std::size_t n0 = 0; n0 < n_sig; n0 += chunk) {
      const std::size_t nc = std::min(chunk, n_sig - n0), cols = nc * t_out;
      col.resize(ck * cols);
      detail::im2col(input.values().data() + n0 * c_in * t_in, col.data(), nc, c_in, t_in, k_size, t_out, stride,
                     pad);
      prod.resize(c_out, cols);
      prod.noalias() = detail::ConstMapMat<T>(kernel.values().data(), c_out, ck) *
                       detail::ConstMapMat<T>(col.data(), ck, cols);
      for (std::size_t n = 0; n < nc; ++n) {
        for (std::size_t f = 0; f < c_out; ++f) {
          const T b = bias.defined() ? bias[f] : T(0);
          const T* src = prod.data() + f * cols + n * t_out;
          T* dst = out.data() + ((n0 + n) * c_out + f) * t_out;
          for (std::size_t t = 0; t < t_out; ++t) dst[t] = src[t] + b;
        }
      }
    }
  }

  Shape shape = input.shape();
  shape[shape.size() - 2] = c_out;
  shape.back() = t_out;
  auto pi = input.node(), pk = kernel.node();
  auto pb = bias.defined() ? bias.node() : nullptr;
  return detail::make_result<T>(
      "conv1d_time", std::move(shape), std::move(out), {&input, &kernel, &bias},
      [=](TensorNode<T>& self) {
        T* gi = detail::grad_of(pi);
        T* gk = detail::grad_of(pk);
        T* gb = detail::grad_of(pb);
        // At stride 1 the input gradient is a correlation of the output
        // gradient with the flipped, transposed kernel.
        const bool direct_gi = gi && stride == 1 && pad.left < k_size;
        detail::RowMat<T> flipped;
        if (direct_gi) {
          flipped.resize(c_in, c_out * k_size);
          const T* w = pk->data.data();
          for (std::size_t f = 0; f < c_out; ++f)
            for (std::size_t c = 0; c < c_in; ++c)
              for (std::size_t k = 0; k < k_size; ++k)
                flipped(c, f * k_size + (k_size - 1 - k)) = w[(f * c_in + c) * k_size + k];
        }
        const ConvPadding gpad{k_size - 1 - std::min(pad.left, k_size - 1), t_in - t_out + pad.left};
        detail::RowMat<T> g, gprod;
        std::vector<T> colb, colg;
        for (std::size_t n0 = 0; n0 < n_sig; n0 += chunk) {
          const std::size_t nc = std::min(chunk, n_sig - n0), cols = nc * t_out;
          g.resize(c_out, cols);
          for (std::size_t n = 0; n < nc; ++n) {
            for (std::size_t f = 0; f < c_out; ++f) {
              const T* src = self.grad.data() + ((n0 + n) * c_out + f) * t_out;
              std::copy(src, src + t_out, g.data() + f * cols + n * t_out);
            }
          }
          if (gk || (gi && !direct_gi)) colb.resize(ck * cols);
          if (gk) {
            detail::im2col(pi->data.data() + n0 * c_in * t_in, colb.data(), nc, c_in, t_in, k_size, t_out, stride,
                           pad);
            detail::MapMat<T>(gk, c_out, ck).noalias() +=
                g * detail::ConstMapMat<T>(colb.data(), ck, cols).transpose();
          }
          if (direct_gi) {
            const std::size_t in_cols = nc * t_in;
            colg.resize(c_out * k_size * in_cols);
            detail::im2col(self.grad.data() + n0 * c_out * t_out, colg.data(), nc, c_out, t_out, k_size, t_in, 1, gpad);
            gprod.resize(c_in, in_cols);
            gprod.noalias() = flipped * detail::ConstMapMat<T>(colg.data(), c_out * k_size, in_cols);
            for (std::size_t n = 0; n < nc; ++n) {
              for (std::size_t c = 0; c < c_in; ++c) {
                const T* src = gprod.data() + c * in_cols + n * t_in;
                T* dst = gi + ((n0 + n) * c_in + c) * t_in;
                for (std::size_t t = 0; t < t_in; ++t) dst[t] += src[t];
              }
            }
          } else if (gi) {
            detail::MapMat<T>(colb.data(), ck, cols).noalias() =
                detail::ConstMapMat<T>(pk->data.data(), c_out, ck).transpose() * g;
            detail::col2im(colb.data(), gi + n0 * c_in * t_in, nc, c_in, t_in, k_size, t_out, stride, pad);
          }
          if (gb) {
            for (std::size_t f = 0; f < c_out; ++f) gb[f] += g.row(f).sum();
          }
        }
      });
}

template <typename T>
Tensor<T> conv1d_time(const Tensor<T>& input, const Tensor<T>& kernel, const Tensor<T>& bias,
                      std::size_t stride = 1, std::size_t padding = 0) {
  return conv1d_time(input, kernel, bias, stride, ConvPadding::symmetric(padding));
}

// ---------------------------------------------------------------------------
// Max pooling over the last axis. Positions past the end introduced by
// pad_right never win, so k=2, stride=1, pad_right=1 preserves length.

template <typename T>
Tensor<T> maxpool1d(const Tensor<T>& input, std::size_t k, std::size_t stride, std::size_t pad_right = 0) {
  if (input.rank() < 1) throw ShapeError("maxpool1d: rank 0 input");
  const std::size_t t_in = input.dim(input.rank() - 1);
  if (k < 1 || stride < 1) throw ShapeError("maxpool1d: k and stride must be >= 1");
  if (k > t_in + pad_right) throw ShapeError("maxpool1d: window larger than input");
  if (pad_right >= k) throw ShapeError("maxpool1d: padding must be smaller than window");
  const std::size_t t_out = (t_in + pad_right - k) / stride + 1;
  const std::size_t rows = detail::leading(input.shape(), 1);

  std::vector<T> out(rows * t_out);
  auto argmax = std::make_shared<std::vector<std::uint32_t>>(rows * t_out);
  const T* in = input.values().data();
  std::uint32_t* am = argmax->data();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* src = in + r * t_in;
    T* dst = out.data() + r * t_out;
    std::uint32_t* arg = am + r * t_out;
    if (k == 2) {
      // Windows fully inside the input, then at most one padded window.
      const std::size_t full = t_in >= 2 ? std::min(t_out, (t_in - 2) / stride + 1) : 0;
      for (std::size_t t = 0; t < full; ++t) {
        const std::size_t a = t * stride;
        const bool second = src[a + 1] > src[a];
        dst[t] = second ? src[a + 1] : src[a];
        arg[t] = static_cast<std::uint32_t>(a + (second ? 1 : 0));
      }
      for (std::size_t t = full; t < t_out; ++t) {
        dst[t] = src[t * stride];
        arg[t] = static_cast<std::uint32_t>(t * stride);
      }
      continue;
    }
    for (std::size_t t = 0; t < t_out; ++t) {
      const std::size_t start = t * stride;
      const std::size_t end = std::min(start + k, t_in);
      std::size_t best = start;
      for (std::size_t i = start + 1; i < end; ++i) {
        if (src[i] > src[best]) best = i;
      }
      out[r * t_out + t] = src[best];
      (*argmax)[r * t_out + t] = static_cast<std::uint32_t>(best);
    }
  }
  Shape shape = input.shape();
  shape.back() = t_out;
  auto pi = input.node();
  return detail::make_result<T>("maxpool1d", std::move(shape), std::move(out), {&input},
                                [pi, argmax, rows, t_in, t_out](TensorNode<T>& self) {
                                  T* gi = detail::grad_of(pi);
                                  if (!gi) return;
                                  const std::uint32_t* am = argmax->data();
                                  const T* g = self.grad.data();
                                  for (std::size_t r = 0; r < rows; ++r) {
                                    T* dst = gi + r * t_in;
                                    for (std::size_t t = 0; t < t_out; ++t) dst[am[r * t_out + t]] += g[r * t_out + t];
                                  }
                                });
}

// ---------------------------------------------------------------------------
// Batch normalization over one channel axis; statistics pool every other axis.

enum class Mode { train, eval };

template <typename T>
struct BatchNormState {
  std::vector<T> running_mean;
  std::vector<T> running_var;
  std::uint64_t batches_tracked = 0;
  T momentum = T(0.1);
  T eps = T(1e-5);

  BatchNormState() = default;
  explicit BatchNormState(std::size_t channels) : running_mean(channels, T(0)), running_var(channels, T(1)) {}
  bool initialized() const { return batches_tracked > 0; }
};

template <typename T>
Tensor<T> batchnorm(const Tensor<T>& input, const Tensor<T>& gamma, const Tensor<T>& beta,
                    BatchNormState<T>& state, Mode mode, std::size_t axis) {
  if (axis >= input.rank()) throw ShapeError("batchnorm: axis out of range");
  const std::size_t channels = input.dim(axis);
  if (gamma.size() != channels || beta.size() != channels || state.running_mean.size() != channels) {
    throw ShapeError("batchnorm: parameter size does not match channel axis");
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= input.dim(i);
  for (std::size_t i = axis + 1; i < input.rank(); ++i) inner *= input.dim(i);
  const std::size_t count = outer * inner;
  const T* x = input.values().data();

  std::vector<T> mean_c(channels), inv_std(channels);
  if (mode == Mode::train) {
    if (count < 2) throw ShapeError("batchnorm: need more than one value per channel in train mode");
    for (std::size_t c = 0; c < channels; ++c) {
      double s = 0;
      for (std::size_t o = 0; o < outer; ++o) {
        const T* p = x + (o * channels + c) * inner;
        s += static_cast<double>(detail::lane_reduce<T>(inner, [p](std::size_t i) { return p[i]; }));
      }
      const double m = s / static_cast<double>(count);
      const T mt = static_cast<T>(m);
      double v = 0;
      for (std::size_t o = 0; o < outer; ++o) {
        const T* p = x + (o * channels + c) * inner;
        v += static_cast<double>(detail::lane_reduce<T>(inner, [p, mt](std::size_t i) { return (p[i] - mt) * (p[i] - mt); }));
      }
      const double var = v / static_cast<double>(count);
      mean_c[c] = static_cast<T>(m);
      inv_std[c] = static_cast<T>(1.0 / std::sqrt(var + static_cast<double>(state.eps)));
      const T unbiased = static_cast<T>(v / static_cast<double>(count - 1));
      state.running_mean[c] = (T(1) - state.momentum) * state.running_mean[c] + state.momentum * mean_c[c];
      state.running_var[c] = (T(1) - state.momentum) * state.running_var[c] + state.momentum * unbiased;
    }
    ++state.batches_tracked;
  } else {
    if (!state.initialized()) throw std::logic_error("batchnorm: eval mode before any train-mode pass");
    for (std::size_t c = 0; c < channels; ++c) {
      mean_c[c] = state.running_mean[c];
      inv_std[c] = T(1) / std::sqrt(state.running_var[c] + state.eps);
    }
  }

  std::vector<T> out(input.size());
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t c = 0; c < channels; ++c) {
      const std::size_t base = (o * channels + c) * inner;
      const T a = gamma[c] * inv_std[c];
      const T b = beta[c] - a * mean_c[c];
      const T* xp = x + base;
      T* op = out.data() + base;
      for (std::size_t i = 0; i < inner; ++i) op[i] = a * xp[i] + b;
    }
  }

  auto pi = input.node(), pg = gamma.node(), pb = beta.node();
  return detail::make_result<T>(
      "batchnorm", input.shape(), std::move(out), {&input, &gamma, &beta},
      [=](TensorNode<T>& self) {
        const T* g = self.grad.data();
        const T* xv = pi->data.data();
        T* gx = detail::grad_of(pi);
        T* gg = detail::grad_of(pg);
        T* gb = detail::grad_of(pb);
        const std::size_t n_outer = outer, n_inner = inner;
        for (std::size_t c = 0; c < channels; ++c) {
          const T mu = mean_c[c], is = inv_std[c];
          T sum_g = 0, sum_gx = 0;
          for (std::size_t o = 0; o < n_outer; ++o) {
            const T* gp = g + (o * channels + c) * n_inner;
            const T* xp = xv + (o * channels + c) * n_inner;
            sum_g += detail::lane_reduce<T>(n_inner, [gp](std::size_t i) { return gp[i]; });
            sum_gx += detail::lane_reduce<T>(n_inner, [gp, xp, mu](std::size_t i) { return gp[i] * (xp[i] - mu); }) * is;
          }
          if (gg) gg[c] += sum_gx;
          if (gb) gb[c] += sum_g;
          if (!gx) continue;
          const T gam = pg->data[c];
          const T n = static_cast<T>(count);
          // Eval mode treats the statistics as constants.
          const T k = mode == Mode::eval ? gam * is : gam * is / n;
          const T a = mode == Mode::eval ? T(1) : n;
          const T b = mode == Mode::eval ? T(0) : sum_g;
          const T d = mode == Mode::eval ? T(0) : sum_gx;
          for (std::size_t o = 0; o < n_outer; ++o) {
            const T* gp = g + (o * channels + c) * n_inner;
            const T* xp = xv + (o * channels + c) * n_inner;
            T* gxp = gx + (o * channels + c) * n_inner;
            for (std::size_t i = 0; i < n_inner; ++i) gxp[i] += k * (a * gp[i] - b - (xp[i] - mu) * is * d);
          }
        }
      });
}

// ---------------------------------------------------------------------------
// Activations

template <typename T>
Tensor<T> leaky_relu(const Tensor<T>& x, T slope = T(0.01)) {
  const std::size_t n = x.size();
  std::vector<T> out(n);
  const T* xs = x.values().data();
  for (std::size_t i = 0; i < n; ++i) out[i] = xs[i] * (xs[i] > T(0) ? T(1) : slope);
  auto px = x.node();
  return detail::make_result<T>("leaky_relu", x.shape(), std::move(out), {&x}, [px, slope, n](TensorNode<T>& self) {
    if (T* g = detail::grad_of(px)) {
      const T* xs = px->data.data();
      const T* go = self.grad.data();
      const T s = slope;
      const std::size_t len = n;
      for (std::size_t i = 0; i < len; ++i) g[i] += go[i] * (xs[i] > T(0) ? T(1) : s);
    }
  });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  std::vector<T> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] > T(0) ? x[i] : T(0);
  auto px = x.node();
  return detail::make_result<T>("relu", x.shape(), std::move(out), {&x}, [px](TensorNode<T>& self) {
    if (T* g = detail::grad_of(px)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) if (px->data[i] > T(0)) g[i] += self.grad[i];
    }
  });
}

template <typename T>
T sigmoid_value(T v) {
  return v >= T(0) ? T(1) / (T(1) + std::exp(-v)) : std::exp(v) / (T(1) + std::exp(v));
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  std::vector<T> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = sigmoid_value(x[i]);
  auto px = x.node();
  return detail::make_result<T>("sigmoid", x.shape(), std::move(out), {&x}, [px](TensorNode<T>& self) {
    if (T* g = detail::grad_of(px)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) {
        const T y = self.data[i];
        g[i] += self.grad[i] * y * (T(1) - y);
      }
    }
  });
}

// Softmax along the last axis.
template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& x) {
  if (x.rank() < 1) throw ShapeError("softmax_rows: rank 0 input");
  const std::size_t width = x.dim(x.rank() - 1);
  const std::size_t rows = x.size() / width;
  std::vector<T> out(x.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const T* src = x.values().data() + r * width;
    T* dst = out.data() + r * width;
    const T mx = *std::max_element(src, src + width);
    T s = 0;
    for (std::size_t i = 0; i < width; ++i) s += (dst[i] = std::exp(src[i] - mx));
    for (std::size_t i = 0; i < width; ++i) dst[i] /= s;
  }
  auto px = x.node();
  return detail::make_result<T>("softmax_rows", x.shape(), std::move(out), {&x}, [px, rows, width](TensorNode<T>& self) {
    T* g = detail::grad_of(px);
    if (!g) return;
    for (std::size_t r = 0; r < rows; ++r) {
      const T* y = self.data.data() + r * width;
      const T* dy = self.grad.data() + r * width;
      T dot = 0;
      for (std::size_t i = 0; i < width; ++i) dot += dy[i] * y[i];
      for (std::size_t i = 0; i < width; ++i) g[r * width + i] += y[i] * (dy[i] - dot);
    }
  });
}

// ---------------------------------------------------------------------------
// Mean over a set of axes; remaining axes keep their order.

template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& x, std::vector<std::size_t> axes) {
  if (axes.empty()) throw ShapeError("global_avg_pool: empty axis set");
  std::sort(axes.begin(), axes.end());
  axes.erase(std::unique(axes.begin(), axes.end()), axes.end());
  if (axes.back() >= x.rank()) throw ShapeError("global_avg_pool: axis out of range");

  const std::size_t rank = x.rank();
  std::vector<bool> reduced(rank, false);
  for (std::size_t a : axes) reduced[a] = true;
  Shape out_shape;
  std::size_t count = 1;
  for (std::size_t i = 0; i < rank; ++i) {
    if (reduced[i]) count *= x.dim(i);
    else out_shape.push_back(x.dim(i));
  }
  if (count == 0) throw ShapeError("global_avg_pool: empty reduction");
  if (out_shape.empty()) out_shape.push_back(1);
  const T inv = T(1) / static_cast<T>(count);
  auto px = x.node();

  // Trailing axes: each output value averages one contiguous run.
  if (axes.back() == rank - 1 && axes.back() - axes.front() + 1 == axes.size()) {
    const std::size_t outer = x.size() / count;
    std::vector<T> out(outer);
    const T* xs = x.values().data();
    for (std::size_t o = 0; o < outer; ++o) {
      const T* p = xs + o * count;
      out[o] = detail::lane_reduce<T>(count, [p](std::size_t i) { return p[i]; }) * inv;
    }
    return detail::make_result<T>("global_avg_pool", std::move(out_shape), std::move(out), {&x},
                                  [px, inv, outer, count](TensorNode<T>& self) {
                                    T* g = detail::grad_of(px);
                                    if (!g) return;
                                    const T* go = self.grad.data();
                                    const std::size_t len = count;
                                    for (std::size_t o = 0; o < outer; ++o) {
                                      const T v = go[o] * inv;
                                      T* dst = g + o * len;
                                      for (std::size_t i = 0; i < len; ++i) dst[i] += v;
                                    }
                                  });
  }

  // Output stride of each input axis (0 for reduced axes).
  std::vector<std::size_t> out_stride(rank, 0);
  {
    std::size_t s = 1;
    for (std::size_t i = rank; i-- > 0;) {
      if (!reduced[i]) {
        out_stride[i] = s;
        s *= x.dim(i);
      }
    }
  }
  auto index_map = std::make_shared<std::vector<std::uint32_t>>(x.size());
  {
    std::vector<std::size_t> idx(rank, 0);
    for (std::size_t flat = 0; flat < x.size(); ++flat) {
      std::size_t o = 0;
      for (std::size_t i = 0; i < rank; ++i) o += idx[i] * out_stride[i];
      (*index_map)[flat] = static_cast<std::uint32_t>(o);
      for (std::size_t i = rank; i-- > 0;) {
        if (++idx[i] < x.dim(i)) break;
        idx[i] = 0;
      }
    }
  }
  std::vector<T> out(numel(out_shape), T(0));
  for (std::size_t flat = 0; flat < x.size(); ++flat) out[(*index_map)[flat]] += x[flat];
  for (T& v : out) v *= inv;

  return detail::make_result<T>("global_avg_pool", std::move(out_shape), std::move(out), {&x},
                                [px, index_map, inv](TensorNode<T>& self) {
                                  T* g = detail::grad_of(px);
                                  if (!g) return;
                                  for (std::size_t flat = 0; flat < index_map->size(); ++flat) {
                                    g[flat] += self.grad[(*index_map)[flat]] * inv;
                                  }
                                });
}

// ---------------------------------------------------------------------------
// Affine map on the last axis: x [..., D_in], W [D_out, D_in], b [D_out] (optional).

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias = Tensor<T>()) {
  if (x.rank() < 1 || weight.rank() != 2) throw ShapeError("linear: bad ranks");
  const std::size_t d_in = x.dim(x.rank() - 1);
  const std::size_t d_out = weight.dim(0);
  if (weight.dim(1) != d_in) {
    throw ShapeError("linear: weight " + shape_str(weight.shape()) + " vs input " + shape_str(x.shape()));
  }
  if (bias.defined() && bias.size() != d_out) throw ShapeError("linear: bias size mismatch");
  const std::size_t m = x.size() / d_in;

  std::vector<T> out(m * d_out);
  detail::MapMat<T> y(out.data(), m, d_out);
  y.noalias() = detail::ConstMapMat<T>(x.values().data(), m, d_in) *
                detail::ConstMapMat<T>(weight.values().data(), d_out, d_in).transpose();
  if (bias.defined()) {
    for (std::size_t r = 0; r < m; ++r) {
      for (std::size_t o = 0; o < d_out; ++o) out[r * d_out + o] += bias[o];
    }
  }
  Shape shape = x.shape();
  shape.back() = d_out;
  auto px = x.node(), pw = weight.node();
  auto pb = bias.defined() ? bias.node() : nullptr;
  return detail::make_result<T>(
      "linear", std::move(shape), std::move(out), {&x, &weight, &bias}, [=](TensorNode<T>& self) {
        detail::ConstMapMat<T> g(self.grad.data(), m, d_out);
        if (T* gx = detail::grad_of(px)) {
          detail::MapMat<T>(gx, m, d_in).noalias() += g * detail::ConstMapMat<T>(pw->data.data(), d_out, d_in);
        }
        if (T* gw = detail::grad_of(pw)) {
          detail::MapMat<T>(gw, d_out, d_in).noalias() +=
              g.transpose() * detail::ConstMapMat<T>(px->data.data(), m, d_in);
        }
        if (T* gb = detail::grad_of(pb)) {
          for (std::size_t o = 0; o < d_out; ++o) gb[o] += g.col(o).sum();
        }
      });
}

// Batched A·Bᵀ: a [B, M, D], b [B, N, D] -> [B, M, N].
template <typename T>
Tensor<T> matmul_nt(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 3 || b.rank() != 3 || a.dim(0) != b.dim(0) || a.dim(2) != b.dim(2)) {
    throw ShapeError("matmul_nt: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  const std::size_t batch = a.dim(0), m = a.dim(1), n = b.dim(1), d = a.dim(2);
  std::vector<T> out(batch * m * n);
  for (std::size_t i = 0; i < batch; ++i) {
    detail::MapMat<T>(out.data() + i * m * n, m, n).noalias() =
        detail::ConstMapMat<T>(a.values().data() + i * m * d, m, d) *
        detail::ConstMapMat<T>(b.values().data() + i * n * d, n, d).transpose();
  }
  auto pa = a.node(), pb = b.node();
  return detail::make_result<T>("matmul_nt", Shape{batch, m, n}, std::move(out), {&a, &b}, [=](TensorNode<T>& self) {
    T* ga = detail::grad_of(pa);
    T* gb = detail::grad_of(pb);
    for (std::size_t i = 0; i < batch; ++i) {
      detail::ConstMapMat<T> g(self.grad.data() + i * m * n, m, n);
      if (ga) {
        detail::MapMat<T>(ga + i * m * d, m, d).noalias() +=
            g * detail::ConstMapMat<T>(pb->data.data() + i * n * d, n, d);
      }
      if (gb) {
        detail::MapMat<T>(gb + i * n * d, n, d).noalias() +=
            g.transpose() * detail::ConstMapMat<T>(pa->data.data() + i * m * d, m, d);
      }
    }
  });
}

// Multiplies each [b, j] slice of u [B, J, ...] by s[b, j].
template <typename T>
Tensor<T> scale_electrodes(const Tensor<T>& u, const Tensor<T>& s) {
  if (u.rank() < 2 || s.rank() != 2 || s.dim(0) != u.dim(0) || s.dim(1) != u.dim(1)) {
    throw ShapeError("scale_electrodes: " + shape_str(u.shape()) + " vs " + shape_str(s.shape()));
  }
  const std::size_t slices = s.size();
  const std::size_t inner = u.size() / slices;
  std::vector<T> out(u.size());
  const T* us = u.values().data();
  for (std::size_t q = 0; q < slices; ++q) {
    const T sq = s[q];
    for (std::size_t i = 0; i < inner; ++i) out[q * inner + i] = sq * us[q * inner + i];
  }
  auto pu = u.node(), ps = s.node();
  return detail::make_result<T>("scale_electrodes", u.shape(), std::move(out), {&u, &s}, [=](TensorNode<T>& self) {
    T* gu = detail::grad_of(pu);
    T* gs = detail::grad_of(ps);
    const T* g = self.grad.data();
    const T* uv = pu->data.data();
    for (std::size_t q = 0; q < slices; ++q) {
      const T sq = ps->data[q];
      if (gu) {
        for (std::size_t i = 0; i < inner; ++i) gu[q * inner + i] += g[q * inner + i] * sq;
      }
      if (gs) {
        const T* gp = g + q * inner;
        const T* up = uv + q * inner;
        gs[q] += detail::lane_reduce<T>(inner, [gp, up](std::size_t i) { return gp[i] * up[i]; });
      }
    }
  });
}

// y[..., c] = x[..., c] * scale[c] + offset[c] with constant scale/offset.
template <typename T>
Tensor<T> column_affine(const Tensor<T>& x, const std::vector<T>& scale_c, const std::vector<T>& offset_c) {
  const std::size_t width = x.dim(x.rank() - 1);
  if (scale_c.size() != width || offset_c.size() != width) throw ShapeError("column_affine: size mismatch");
  std::vector<T> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * scale_c[i % width] + offset_c[i % width];
  auto px = x.node();
  return detail::make_result<T>("column_affine", x.shape(), std::move(out), {&x}, [px, scale_c, width](TensorNode<T>& self) {
    if (T* g = detail::grad_of(px)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * scale_c[i % width];
    }
  });
}

}  // namespace eegatt
