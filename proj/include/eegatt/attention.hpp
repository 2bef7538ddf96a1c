#pragma once

// Electrode-wise attention: Squeeze-and-Excitation and pooled self-attention.
// Both produce one scale in (0,1) per electrode, used to reweight features
// and kept in a trace for explanations.

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "eegatt/ops.hpp"

namespace eegatt {

enum class ScaleSource { se, sa };

inline std::string to_string(ScaleSource s) { return s == ScaleSource::se ? "SE" : "SA"; }

// One sample's electrode scales from one attention insertion point.
struct ElectrodeScales {
  ScaleSource source = ScaleSource::se;
  std::size_t layer = 0;
  std::vector<double> values;  // length J, each in (0,1)
};

// Append-only record of scales produced during one forward pass. Each entry
// keeps the whole batch as [B, J].
struct ScaleTrace {
  struct Entry {
    ScaleSource source;
    std::size_t layer;
    std::size_t batch;
    std::size_t electrodes;
    std::vector<double> values;
  };
  std::vector<Entry> entries;

  template <typename T>
  void record(ScaleSource source, std::size_t layer, const Tensor<T>& s) {
    entries.push_back({source, layer, s.dim(0), s.dim(1), std::vector<double>(s.values().begin(), s.values().end())});
  }
};

// Per-sample view of a trace: result[b] lists every insertion point in
// network order.
inline std::vector<std::vector<ElectrodeScales>> collect_scales(const std::optional<ScaleTrace>& trace) {
  if (!trace) throw std::logic_error("collect_scales: scale recording was disabled for this forward pass");
  std::vector<std::vector<ElectrodeScales>> out;
  if (trace->entries.empty()) return out;
  const std::size_t batch = trace->entries.front().batch;
  out.resize(batch);
  for (const auto& e : trace->entries) {
    for (std::size_t b = 0; b < batch; ++b) {
      ElectrodeScales s{e.source, e.layer, {}};
      s.values.assign(e.values.begin() + static_cast<std::ptrdiff_t>(b * e.electrodes),
                      e.values.begin() + static_cast<std::ptrdiff_t>((b + 1) * e.electrodes));
      out[b].push_back(std::move(s));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Squeeze-and-Excitation

inline std::size_t se_hidden_width(std::size_t electrodes, std::size_t ratio) {
  if (ratio == 0) throw std::invalid_argument("SE reduction ratio must be positive");
  return std::max<std::size_t>(1, electrodes / ratio);
}

template <typename T>
struct SeBlock {
  Tensor<T> w1;  // [J/r, J]
  Tensor<T> w2;  // [J, J/r]
  std::size_t ratio = 4;

  std::size_t electrodes() const { return w1.dim(1); }
};

template <typename T>
struct SeOutput {
  Tensor<T> features;  // same shape as the input
  Tensor<T> scales;    // [B, J]
};

// u: [B, J, ...]. Squeeze averages every non-electrode axis.
template <typename T>
SeOutput<T> se_forward(const Tensor<T>& u, const SeBlock<T>& block) {
  if (u.rank() < 3) throw ShapeError("se_forward: expected [B, J, ...], got " + shape_str(u.shape()));
  if (u.dim(1) != block.electrodes()) {
    throw ShapeError("se_forward: block built for " + std::to_string(block.electrodes()) + " electrodes, input has " +
                     std::to_string(u.dim(1)));
  }
  std::vector<std::size_t> axes;
  for (std::size_t a = 2; a < u.rank(); ++a) axes.push_back(a);
  Tensor<T> z = global_avg_pool(u, axes);  // [B, J]
  Tensor<T> s = sigmoid(linear(relu(linear(z, block.w1)), block.w2));
  return {scale_electrodes(u, s), s};
}

// ---------------------------------------------------------------------------
// Pooled self-attention over electrodes

// Which axis of M_att is averaged into one value per electrode.
enum class SaPooling {
  received,  // column means: attention each electrode receives
  given,     // row means; always 1/J since rows are stochastic
};

inline std::string to_string(SaPooling p) { return p == SaPooling::received ? "received" : "given"; }

inline SaPooling sa_pooling_from_string(const std::string& s) {
  if (s == "received") return SaPooling::received;
  if (s == "given") return SaPooling::given;
  throw std::invalid_argument("unknown SA pooling '" + s + "'");
}

template <typename T>
struct SaBlock {
  Tensor<T> w_q;  // [d_k, d_model]
  Tensor<T> w_k;
  Tensor<T> w_v;
  SaPooling pooling = SaPooling::received;

  std::size_t d_model() const { return w_q.dim(1); }
  std::size_t d_k() const { return w_q.dim(0); }
};

template <typename T>
struct SaOutput {
  Tensor<T> features;   // [B, J, d_k]
  Tensor<T> scales;     // Z_att, [B, J]
  Tensor<T> attention;  // M_att, [B, J, J]
};

// u: [B, J, d_model].
template <typename T>
SaOutput<T> sa_forward(const Tensor<T>& u, const SaBlock<T>& block) {
  if (u.rank() != 3 || u.dim(2) != block.d_model()) {
    throw ShapeError("sa_forward: expected [B, J, " + std::to_string(block.d_model()) + "], got " +
                     shape_str(u.shape()));
  }
  Tensor<T> q = linear(u, block.w_q);
  Tensor<T> k = linear(u, block.w_k);
  Tensor<T> v = linear(u, block.w_v);
  const T inv_sqrt_dk = T(1) / std::sqrt(static_cast<T>(block.d_k()));
  Tensor<T> m = softmax_rows(scale(matmul_nt(q, k), inv_sqrt_dk));
  Tensor<T> pooled = global_avg_pool(m, {block.pooling == SaPooling::received ? std::size_t{1} : std::size_t{2}});
  Tensor<T> z = sigmoid(pooled);
  return {scale_electrodes(v, z), z, m};
}

}  // namespace eegatt
