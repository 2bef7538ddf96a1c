#pragma once

// Central finite differences, used as the independent oracle for every
// analytic gradient in the engine.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <span>

#include "eegatt/tensor.hpp"

namespace eegatt {

// (f(x + h e_i) - f(x - h e_i)) / 2h for every coordinate of `coords`, which
// f reads in place. Coordinates are restored afterwards.
template <typename T>
std::vector<double> finite_diff_grad(const std::function<double()>& f, std::span<T> coords, double h = 1e-5) {
  std::vector<double> out(coords.size());
  for (std::size_t i = 0; i < coords.size(); ++i) {
    const T saved = coords[i];
    coords[i] = static_cast<T>(saved + h);
    const double up = f();
    coords[i] = static_cast<T>(saved - h);
    const double down = f();
    coords[i] = saved;
    out[i] = (up - down) / (2 * h);
  }
  return out;
}

// Tensor form: f maps x to a scalar tensor.
template <typename T>
Tensor<T> finite_diff_grad(const std::function<Tensor<T>(const Tensor<T>&)>& f, const Tensor<T>& x, double h = 1e-5) {
  Tensor<T> probe = x.detach();
  NoGradGuard no_grad;
  auto g = finite_diff_grad<T>([&] { return static_cast<double>(f(probe).item()); }, probe.data(), h);
  std::vector<T> data(g.begin(), g.end());
  return Tensor<T>(x.shape(), std::move(data));
}

// |a - n| / max(|a|, |n|, floor). The floor keeps coordinates whose true
// gradient is ~0 from dominating through round-off.
inline double gradient_rel_error(double analytic, double numeric, double floor = 1e-6) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / denom;
}

inline double max_rel_error(std::span<const double> analytic, std::span<const double> numeric, double floor = 1e-6) {
  double worst = 0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    worst = std::max(worst, gradient_rel_error(analytic[i], numeric[i], floor));
  }
  return worst;
}

// Compares backward() against finite differences for each tensor in `wrt`.
// `loss` must rebuild the graph from the current tensor values on each call.
template <typename T>
double check_gradients(const std::function<Tensor<T>()>& loss, std::vector<Tensor<T>> wrt, double h = 1e-5,
                       double floor = 1e-6) {
  for (auto& t : wrt) {
    t.set_requires_grad(true);
    t.zero_grad();
  }
  loss().backward();
  double worst = 0;
  for (auto& t : wrt) {
    std::vector<double> analytic(t.size(), 0.0);
    if (t.has_grad()) {
      auto g = t.grad();
      std::copy(g.begin(), g.end(), analytic.begin());
    }
    auto numeric = finite_diff_grad<T>(
        [&] {
          NoGradGuard no_grad;
          return static_cast<double>(loss().item());
        },
        t.data(), h);
    worst = std::max(worst, max_rel_error(analytic, numeric, floor));
  }
  return worst;
}

// Per-tensor ||a - n|| / max(||a||, ||n||, floor), worst over `wrt`. Used for
// whole models, where many coordinates carry gradients near the round-off
// level of a central difference and an element-wise ratio measures noise.
// Tensors whose analytic and numeric gradients are both within ten times the
// round-off of the difference quotient are skipped; their true gradient is
// zero (a conv bias followed by batch norm).
template <typename T>
double check_gradients_normwise(const std::function<Tensor<T>()>& loss, std::vector<Tensor<T>> wrt, double h = 1e-6,
                                double floor = 1e-12) {
  for (auto& t : wrt) {
    t.set_requires_grad(true);
    t.zero_grad();
  }
  auto value = loss();
  value.backward();
  const double fd_noise = 10.0 * std::numeric_limits<T>::epsilon() * std::max(1.0, std::abs(double(value.item()))) / h;
  double worst = 0;
  for (auto& t : wrt) {
    std::vector<double> analytic(t.size(), 0.0);
    if (t.has_grad()) {
      auto g = t.grad();
      std::copy(g.begin(), g.end(), analytic.begin());
    }
    auto numeric = finite_diff_grad<T>(
        [&] {
          NoGradGuard no_grad;
          return static_cast<double>(loss().item());
        },
        t.data(), h);
    double diff = 0, na = 0, nn = 0;
    for (std::size_t i = 0; i < analytic.size(); ++i) {
      diff += (analytic[i] - numeric[i]) * (analytic[i] - numeric[i]);
      na += analytic[i] * analytic[i];
      nn += numeric[i] * numeric[i];
    }
    const double noise = fd_noise * std::sqrt(static_cast<double>(t.size()));
    if (std::max(std::sqrt(na), std::sqrt(nn)) <= noise) continue;
    worst = std::max(worst, std::sqrt(diff) / std::max({std::sqrt(na), std::sqrt(nn), floor}));
  }
  return worst;
}

}  // namespace eegatt
