#pragma once

// Training losses and evaluation metrics for gaze regression.

#include <cmath>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "eegatt/tensor.hpp"

namespace eegatt {

enum class TaskKind { position, amplitude, angle };

inline std::string to_string(TaskKind t) {
  switch (t) {
    case TaskKind::position: return "position";
    case TaskKind::amplitude: return "amplitude";
    case TaskKind::angle: return "angle";
  }
  return "?";
}

inline TaskKind task_from_string(const std::string& s) {
  if (s == "position") return TaskKind::position;
  if (s == "amplitude") return TaskKind::amplitude;
  if (s == "angle") return TaskKind::angle;
  throw std::invalid_argument("unknown task '" + s + "'");
}

inline std::size_t output_dim(TaskKind t) { return t == TaskKind::position ? 2 : 1; }

// Signed angular difference in [-pi, pi].
inline double wrap_angle(double a) { return std::atan2(std::sin(a), std::cos(a)); }

inline double angle_loss(double p, double t) { return std::abs(wrap_angle(p - t)); }

inline double smooth_l1(double d, double beta = 1.0) {
  const double a = std::abs(d);
  return a < beta ? 0.5 * d * d / beta : a - 0.5 * beta;
}

// Mean of |wrap(p - t)| over all elements. Target carries no gradient.
template <typename T>
Tensor<T> angle_loss(const Tensor<T>& pred, const Tensor<T>& target) {
  if (pred.shape() != target.shape()) throw ShapeError("angle_loss: shape mismatch");
  const std::size_t n = pred.size();
  std::vector<T> diff(n);
  double total = 0;
  for (std::size_t i = 0; i < n; ++i) {
    diff[i] = static_cast<T>(wrap_angle(static_cast<double>(pred[i]) - static_cast<double>(target[i])));
    total += std::abs(static_cast<double>(diff[i]));
  }
  auto pp = pred.node();
  return detail::make_result<T>("angle_loss", Shape{1}, std::vector<T>{static_cast<T>(total / n)}, {&pred},
                                [pp, diff, n](TensorNode<T>& self) {
                                  T* g = detail::grad_of(pp);
                                  if (!g) return;
                                  const T go = self.grad[0] / static_cast<T>(n);
                                  for (std::size_t i = 0; i < n; ++i) {
                                    g[i] += diff[i] > T(0) ? go : (diff[i] < T(0) ? -go : T(0));
                                  }
                                });
}

template <typename T>
Tensor<T> smooth_l1(const Tensor<T>& pred, const Tensor<T>& target, double beta = 1.0) {
  if (pred.shape() != target.shape()) throw ShapeError("smooth_l1: shape mismatch");
  if (!(beta > 0)) throw std::invalid_argument("smooth_l1: beta must be positive");
  const std::size_t n = pred.size();
  std::vector<T> diff(n);
  double total = 0;
  for (std::size_t i = 0; i < n; ++i) {
    diff[i] = pred[i] - target[i];
    total += smooth_l1(static_cast<double>(diff[i]), beta);
  }
  auto pp = pred.node();
  const T b = static_cast<T>(beta);
  return detail::make_result<T>("smooth_l1", Shape{1}, std::vector<T>{static_cast<T>(total / n)}, {&pred},
                                [pp, diff, n, b](TensorNode<T>& self) {
                                  T* g = detail::grad_of(pp);
                                  if (!g) return;
                                  const T go = self.grad[0] / static_cast<T>(n);
                                  for (std::size_t i = 0; i < n; ++i) {
                                    const T d = diff[i];
                                    const T slope = std::abs(d) < b ? d / b : (d > T(0) ? T(1) : T(-1));
                                    g[i] += go * slope;
                                  }
                                });
}

// ---------------------------------------------------------------------------
// Metrics

struct Point {
  double x = 0;
  double y = 0;
};

inline std::vector<double> euclidean_distances(std::span<const Point> pred, std::span<const Point> target) {
  if (pred.size() != target.size()) throw std::invalid_argument("euclidean_distance: size mismatch");
  std::vector<double> d(pred.size());
  for (std::size_t i = 0; i < pred.size(); ++i) d[i] = std::hypot(pred[i].x - target[i].x, pred[i].y - target[i].y);
  return d;
}

inline double mean_of(std::span<const double> v) {
  if (v.empty()) return 0;
  double s = 0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

inline double mean_euclidean_distance(std::span<const Point> pred, std::span<const Point> target) {
  return mean_of(euclidean_distances(pred, target));
}

// Ratio of the CNN row of the reference results table: 115.0143 px / 2.39 deg.
inline constexpr double kDefaultPxPerDegree = 48.12;

inline double px_to_visual_angle(double px, double px_per_degree = kDefaultPxPerDegree) {
  if (!(px_per_degree > 0)) throw std::invalid_argument("px_per_degree must be positive");
  return px / px_per_degree;
}

inline double rmse(std::span<const double> pred, std::span<const double> target) {
  if (pred.size() != target.size()) throw std::invalid_argument("rmse: size mismatch");
  if (pred.empty()) return 0;
  double s = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) s += (pred[i] - target[i]) * (pred[i] - target[i]);
  return std::sqrt(s / static_cast<double>(pred.size()));
}

inline double rmse_angle(std::span<const double> pred, std::span<const double> target) {
  if (pred.size() != target.size()) throw std::invalid_argument("rmse_angle: size mismatch");
  if (pred.empty()) return 0;
  double s = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double w = wrap_angle(pred[i] - target[i]);
    s += w * w;
  }
  return std::sqrt(s / static_cast<double>(pred.size()));
}

struct MetricReport {
  TaskKind task = TaskKind::position;
  std::size_t n_samples = 0;
  std::optional<double> mean_euclidean_px;
  std::optional<double> mean_visual_angle_deg;
  std::optional<double> rmse_angle_rad;
  std::optional<double> rmse_amplitude_px;
  std::vector<double> per_sample_errors;

  // The headline number for model selection (lower is better).
  double primary() const {
    switch (task) {
      case TaskKind::position: return mean_euclidean_px.value_or(0);
      case TaskKind::amplitude: return rmse_amplitude_px.value_or(0);
      case TaskKind::angle: return rmse_angle_rad.value_or(0);
    }
    return 0;
  }
};

inline MetricReport position_report(std::span<const Point> pred, std::span<const Point> target,
                                    double px_per_degree = kDefaultPxPerDegree) {
  MetricReport r;
  r.task = TaskKind::position;
  r.n_samples = pred.size();
  r.per_sample_errors = euclidean_distances(pred, target);
  r.mean_euclidean_px = mean_of(r.per_sample_errors);
  r.mean_visual_angle_deg = px_to_visual_angle(*r.mean_euclidean_px, px_per_degree);
  return r;
}

inline MetricReport scalar_report(TaskKind task, std::span<const double> pred, std::span<const double> target) {
  MetricReport r;
  r.task = task;
  r.n_samples = pred.size();
  r.per_sample_errors.resize(pred.size());
  for (std::size_t i = 0; i < pred.size(); ++i) {
    r.per_sample_errors[i] =
        task == TaskKind::angle ? angle_loss(pred[i], target[i]) : std::abs(pred[i] - target[i]);
  }
  if (task == TaskKind::angle) r.rmse_angle_rad = rmse_angle(pred, target);
  else r.rmse_amplitude_px = rmse(pred, target);
  return r;
}

inline nlohmann::ordered_json to_json(const MetricReport& r) {
  nlohmann::ordered_json j;
  j["task"] = to_string(r.task);
  j["n_samples"] = r.n_samples;
  if (r.mean_euclidean_px) j["mean_euclidean_px"] = *r.mean_euclidean_px;
  if (r.mean_visual_angle_deg) j["mean_visual_angle_deg"] = *r.mean_visual_angle_deg;
  if (r.rmse_angle_rad) j["rmse_angle_rad"] = *r.rmse_angle_rad;
  if (r.rmse_amplitude_px) j["rmse_amplitude_px"] = *r.rmse_amplitude_px;
  return j;
}

}  // namespace eegatt
