#pragma once

// Naive reference implementations, written independently of the engine.

#include <cmath>
#include <cstddef>
#include <limits>
#include <vector>

namespace oracle {

// x [N, C, T], w [F, C, K], b [F], zero padding (left, right).
inline std::vector<double> conv1d(const std::vector<double>& x, std::size_t n, std::size_t c, std::size_t t,
                                  const std::vector<double>& w, std::size_t f, std::size_t k, const std::vector<double>& b,
                                  std::size_t stride, std::size_t pad_left, std::size_t pad_right, std::size_t& t_out) {
  t_out = (t + pad_left + pad_right - k) / stride + 1;
  std::vector<double> y(n * f * t_out, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t o = 0; o < f; ++o) {
      for (std::size_t s = 0; s < t_out; ++s) {
        double acc = b.empty() ? 0.0 : b[o];
        for (std::size_t ci = 0; ci < c; ++ci) {
          for (std::size_t kk = 0; kk < k; ++kk) {
            const long pos = static_cast<long>(s * stride + kk) - static_cast<long>(pad_left);
            if (pos < 0 || pos >= static_cast<long>(t)) continue;
            acc += w[(o * c + ci) * k + kk] * x[(i * c + ci) * t + static_cast<std::size_t>(pos)];
          }
        }
        y[(i * f + o) * t_out + s] = acc;
      }
    }
  }
  return y;
}

// Max over windows of the last axis; positions beyond the end are ignored.
inline std::vector<double> maxpool(const std::vector<double>& x, std::size_t rows, std::size_t t, std::size_t k,
                                   std::size_t stride, std::size_t pad_right, std::size_t& t_out) {
  t_out = (t + pad_right - k) / stride + 1;
  std::vector<double> y(rows * t_out);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t s = 0; s < t_out; ++s) {
      double m = -std::numeric_limits<double>::infinity();
      for (std::size_t kk = 0; kk < k; ++kk) {
        const std::size_t pos = s * stride + kk;
        if (pos < t && x[r * t + pos] > m) m = x[r * t + pos];
      }
      y[r * t_out + s] = m;
    }
  }
  return y;
}

// x [M, D_in], w [D_out, D_in], b [D_out].
inline std::vector<double> linear(const std::vector<double>& x, std::size_t m, std::size_t d_in,
                                  const std::vector<double>& w, std::size_t d_out, const std::vector<double>& b) {
  std::vector<double> y(m * d_out);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t o = 0; o < d_out; ++o) {
      double acc = b.empty() ? 0.0 : b[o];
      for (std::size_t j = 0; j < d_in; ++j) acc += w[o * d_in + j] * x[i * d_in + j];
      y[i * d_out + o] = acc;
    }
  }
  return y;
}

// Mean over the trailing `inner` elements of each of `outer` blocks.
inline std::vector<double> mean_trailing(const std::vector<double>& x, std::size_t outer, std::size_t inner) {
  std::vector<double> y(outer, 0.0);
  for (std::size_t o = 0; o < outer; ++o) {
    double s = 0;
    for (std::size_t i = 0; i < inner; ++i) s += x[o * inner + i];
    y[o] = s / static_cast<double>(inner);
  }
  return y;
}

// Mean distance from the centre of a uniform a×b rectangle, closed form.
inline double mean_distance_from_center(double width, double height) {
  const double a = width / 2, b = height / 2, d = std::hypot(a, b);
  return d / 3 + a * a / (6 * b) * std::log((b + d) / a) + b * b / (6 * a) * std::log((a + d) / b);
}

// Same quantity by midpoint quadrature on an n×n grid.
inline double mean_distance_from_center_grid(double width, double height, std::size_t n) {
  double s = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double x = (static_cast<double>(i) + 0.5) / static_cast<double>(n) * width - width / 2;
    for (std::size_t j = 0; j < n; ++j) {
      const double y = (static_cast<double>(j) + 0.5) / static_cast<double>(n) * height - height / 2;
      s += std::hypot(x, y);
    }
  }
  return s / static_cast<double>(n * n);
}

}  // namespace oracle
