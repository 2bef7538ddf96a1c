#pragma once

// Post-hoc explanations: attention summaries and normalization, important
// electrodes, noisy-vs-clean attention statistics, and epsilon-rule LRP for
// the attention-free CNN.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "eegatt/checkpoint.hpp"
#include "eegatt/data.hpp"
#include "eegatt/model.hpp"

namespace eegatt {

// ---------------------------------------------------------------------------
// Attention summaries

enum class SummaryMode { sa_only, se_mean, all_mean };

inline std::string to_string(SummaryMode m) {
  switch (m) {
    case SummaryMode::sa_only: return "sa_only";
    case SummaryMode::se_mean: return "se_mean";
    default: return "all_mean";
  }
}

inline SummaryMode summary_mode_from_string(const std::string& s) {
  if (s == "sa_only") return SummaryMode::sa_only;
  if (s == "se_mean") return SummaryMode::se_mean;
  if (s == "all_mean") return SummaryMode::all_mean;
  throw std::invalid_argument("unknown attention summary mode '" + s + "'");
}

class MissingSourceError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// One raw per-electrode vector from a sample's scale trace.
inline std::vector<double> attention_summary(const std::vector<ElectrodeScales>& trace, SummaryMode mode) {
  if (trace.empty()) throw std::invalid_argument("attention_summary: empty trace");
  std::vector<const ElectrodeScales*> picked;
  for (const auto& s : trace) {
    if (mode == SummaryMode::all_mean || (mode == SummaryMode::sa_only && s.source == ScaleSource::sa) ||
        (mode == SummaryMode::se_mean && s.source == ScaleSource::se)) {
      picked.push_back(&s);
    }
  }
  if (picked.empty()) {
    throw MissingSourceError("attention_summary: trace has no " +
                             std::string(mode == SummaryMode::sa_only ? "SA" : "SE") + " scales");
  }
  const std::size_t j = picked.front()->values.size();
  std::vector<double> out(j, 0.0);
  for (const auto* s : picked) {
    if (s->values.size() != j) throw ShapeError("attention_summary: inconsistent electrode counts");
    for (std::size_t e = 0; e < j; ++e) out[e] += s->values[e];
  }
  for (double& v : out) v /= static_cast<double>(picked.size());
  return out;
}

enum class NormalizeMode { min_max, sum_to_one };

inline std::vector<double> normalize_attention(const std::vector<double>& raw,
                                               NormalizeMode mode = NormalizeMode::min_max) {
  if (raw.size() < 2) throw std::invalid_argument("normalize_attention: need at least two electrodes");
  std::vector<double> a(raw.size());
  if (mode == NormalizeMode::sum_to_one) {
    const double total = std::accumulate(raw.begin(), raw.end(), 0.0);
    if (total == 0.0) throw std::invalid_argument("normalize_attention: zero total for sum-to-one");
    for (std::size_t i = 0; i < raw.size(); ++i) a[i] = raw[i] / total;
    return a;
  }
  const auto [lo, hi] = std::minmax_element(raw.begin(), raw.end());
  const double span = *hi - *lo;
  for (std::size_t i = 0; i < raw.size(); ++i) a[i] = span > 0 ? (raw[i] - *lo) / span : 0.5;
  return a;
}

// Electrodes whose sequence-mean attention strictly exceeds the mean over all
// electrodes.
inline std::vector<std::size_t> important_electrodes(const std::vector<std::vector<double>>& sequence) {
  if (sequence.empty()) throw std::invalid_argument("important_electrodes: empty sequence");
  const std::size_t j = sequence.front().size();
  std::vector<double> col(j, 0.0);
  for (const auto& a : sequence) {
    if (a.size() != j) throw ShapeError("important_electrodes: inconsistent electrode counts");
    for (std::size_t e = 0; e < j; ++e) col[e] += a[e];
  }
  // mean_e > mean of means  <=>  J * col_e > sum of columns; no division, so
  // exact ties stay ties.
  const double total = std::accumulate(col.begin(), col.end(), 0.0);
  std::vector<std::size_t> out;
  for (std::size_t e = 0; e < j; ++e) {
    if (col[e] * static_cast<double>(j) > total) out.push_back(e);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Noisy vs clean electrodes

inline constexpr double kDefaultAttentionThreshold = 0.05;

struct NoisyStats {
  double tau = kDefaultAttentionThreshold;
  std::size_t n_samples = 0;  // samples with at least one noisy electrode
  std::size_t n_noisy = 0;    // electrode instances
  std::size_t n_clean = 0;
  std::optional<double> frac_below_noisy, frac_below_clean;
  std::optional<double> mean_noisy, mean_clean;
};

class NoAnnotationsError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// attention[i] and noisy[i] describe sample i. Only samples with at least one
// noisy electrode count; statistics pool electrode instances.
inline NoisyStats noisy_attention_stats(const std::vector<std::vector<double>>& attention,
                                        const std::vector<std::vector<std::uint16_t>>& noisy,
                                        double tau = kDefaultAttentionThreshold) {
  if (attention.size() != noisy.size()) throw ShapeError("noisy_attention_stats: annotation count mismatch");
  NoisyStats st;
  st.tau = tau;
  double sum_noisy = 0, sum_clean = 0;
  std::size_t below_noisy = 0, below_clean = 0;
  for (std::size_t i = 0; i < attention.size(); ++i) {
    if (noisy[i].empty()) continue;
    ++st.n_samples;
    std::vector<bool> is_noisy(attention[i].size(), false);
    for (auto e : noisy[i]) {
      if (e >= is_noisy.size()) throw std::out_of_range("noisy_attention_stats: electrode index out of range");
      is_noisy[e] = true;
    }
    for (std::size_t e = 0; e < attention[i].size(); ++e) {
      const double a = attention[i][e];
      if (is_noisy[e]) {
        ++st.n_noisy;
        sum_noisy += a;
        below_noisy += a < tau;
      } else {
        ++st.n_clean;
        sum_clean += a;
        below_clean += a < tau;
      }
    }
  }
  if (st.n_samples == 0) throw NoAnnotationsError("noisy_attention_stats: no sample has a noisy electrode");
  if (st.n_noisy > 0) {
    st.mean_noisy = sum_noisy / static_cast<double>(st.n_noisy);
    st.frac_below_noisy = static_cast<double>(below_noisy) / static_cast<double>(st.n_noisy);
  }
  if (st.n_clean > 0) {
    st.mean_clean = sum_clean / static_cast<double>(st.n_clean);
    st.frac_below_clean = static_cast<double>(below_clean) / static_cast<double>(st.n_clean);
  }
  return st;
}

inline nlohmann::ordered_json to_json(const NoisyStats& s) {
  auto opt = [](const std::optional<double>& v) { return v ? nlohmann::ordered_json(*v) : nlohmann::ordered_json(); };
  nlohmann::ordered_json j;
  j["tau"] = s.tau;
  j["n_samples"] = s.n_samples;
  j["n_noisy_instances"] = s.n_noisy;
  j["n_clean_instances"] = s.n_clean;
  j["frac_below_noisy"] = opt(s.frac_below_noisy);
  j["frac_below_clean"] = opt(s.frac_below_clean);
  j["mean_noisy"] = opt(s.mean_noisy);
  j["mean_clean"] = opt(s.mean_clean);
  j["reference_real_data"] = {{"frac_below_noisy", 0.42}, {"frac_below_clean", 0.19}};
  return j;
}

// ---------------------------------------------------------------------------
// Attention report over a dataset

struct AttentionReport {
  SummaryMode mode = SummaryMode::sa_only;
  NormalizeMode normalization = NormalizeMode::min_max;
  std::vector<std::vector<double>> normalized;  // [sample][electrode]
  std::vector<std::size_t> important;           // over the whole sequence
  std::optional<NoisyStats> noisy;              // when annotations exist
};

template <typename T>
AttentionReport attention_report(AttentionCnn<T>& model, const EegDataset& ds, SummaryMode mode = SummaryMode::sa_only,
                                 NormalizeMode norm = NormalizeMode::min_max,
                                 double tau = kDefaultAttentionThreshold, std::size_t batch_size = 64) {
  if (ds.size() == 0) throw std::invalid_argument("attention_report: empty dataset");
  if (!model.config().use_se && !model.config().use_sa) {
    throw MissingSourceError("attention_report: model has no attention blocks");
  }
  if (mode == SummaryMode::sa_only && !model.config().use_sa) {
    throw MissingSourceError("attention_report: mode sa_only needs a model with SA");
  }
  if (mode == SummaryMode::se_mean && !model.config().use_se) {
    throw MissingSourceError("attention_report: mode se_mean needs a model with SE");
  }
  NoGradGuard no_grad;
  model.eval();
  AttentionReport rep;
  rep.mode = mode;
  rep.normalization = norm;
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < ds.size(); start += batch_size) {
    idx.clear();
    for (std::size_t i = start; i < std::min(ds.size(), start + batch_size); ++i) idx.push_back(i);
    auto res = model.forward(batch_signals<T>(ds, idx), true);
    for (const auto& sample : collect_scales(res.trace)) {
      rep.normalized.push_back(normalize_attention(attention_summary(sample, mode), norm));
    }
  }
  rep.important = important_electrodes(rep.normalized);
  std::vector<std::vector<std::uint16_t>> noisy;
  bool any = false;
  for (const auto& s : ds.samples) {
    noisy.push_back(s.noisy_electrodes);
    any = any || !s.noisy_electrodes.empty();
  }
  if (any) rep.noisy = noisy_attention_stats(rep.normalized, noisy, tau);
  return rep;
}

inline nlohmann::ordered_json to_json(const AttentionReport& r) {
  nlohmann::ordered_json j;
  j["mode"] = to_string(r.mode);
  j["normalization"] = r.normalization == NormalizeMode::min_max ? "min_max" : "sum_to_one";
  j["n_samples"] = r.normalized.size();
  j["important_electrodes"] = r.important;
  j["normalized_attention"] = r.normalized;
  j["noisy_stats"] = r.noisy ? to_json(*r.noisy) : nlohmann::ordered_json();
  return j;
}

// ---------------------------------------------------------------------------
// Epsilon-rule LRP

inline constexpr double kDefaultLrpEps = 1e-6;

struct RelevanceMap {
  std::size_t electrodes = 0;
  std::size_t timepoints = 0;
  std::size_t component = 0;
  double eps = kDefaultLrpEps;
  double output = 0;          // explained scalar (model output component)
  double bias_relevance = 0;  // relevance retained by biases and the output offset
  std::vector<double> values;  // [J, T]

  double input_total() const { return std::accumulate(values.begin(), values.end(), 0.0); }
  double total() const { return input_total() + bias_relevance; }
  double leakage() const { return std::abs(total() - output) / std::max(std::abs(output), 1e-300); }

  std::vector<double> per_electrode() const {
    std::vector<double> out(electrodes, 0.0);
    for (std::size_t j = 0; j < electrodes; ++j) {
      for (std::size_t t = 0; t < timepoints; ++t) out[j] += values[j * timepoints + t];
    }
    return out;
  }
};

inline nlohmann::ordered_json to_json(const RelevanceMap& r) {
  nlohmann::ordered_json j;
  j["electrodes"] = r.electrodes;
  j["timepoints"] = r.timepoints;
  j["component"] = r.component;
  j["eps"] = r.eps;
  j["output"] = r.output;
  j["input_relevance"] = r.input_total();
  j["bias_relevance"] = r.bias_relevance;
  j["leakage"] = r.leakage();
  j["per_electrode"] = r.per_electrode();
  return j;
}

class LrpUnsupportedError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

namespace detail {

inline double stabilize(double z, double eps) { return z + (z >= 0 ? eps : -eps); }

// Activations of one electrode-wise feature map: [J, C, T].
struct Fmap {
  std::size_t c = 0, t = 0;
  std::vector<double> v;  // J * c * t
};

struct LrpConv {
  std::vector<double> w;  // [F, C, K] with batch norm folded in
  std::vector<double> b;  // [F]
  std::size_t f = 0, c = 0, k = 0;
  ConvPadding pad;
};

inline Fmap lrp_conv_forward(const LrpConv& L, const Fmap& x, std::size_t j) {
  Fmap y{L.f, x.t, std::vector<double>(j * L.f * x.t)};
  for (std::size_t e = 0; e < j; ++e) {
    for (std::size_t f = 0; f < L.f; ++f) {
      for (std::size_t t = 0; t < x.t; ++t) {
        double z = L.b[f];
        for (std::size_t c = 0; c < L.c; ++c) {
          for (std::size_t k = 0; k < L.k; ++k) {
            const std::ptrdiff_t p = static_cast<std::ptrdiff_t>(t + k) - static_cast<std::ptrdiff_t>(L.pad.left);
            if (p < 0 || p >= static_cast<std::ptrdiff_t>(x.t)) continue;
            z += L.w[(f * L.c + c) * L.k + k] * x.v[(e * x.c + c) * x.t + static_cast<std::size_t>(p)];
          }
        }
        y.v[(e * L.f + f) * x.t + t] = z;
      }
    }
  }
  return y;
}

// Relevance of the conv input given relevance of its pre-activation output.
inline std::vector<double> lrp_conv_backward(const LrpConv& L, const Fmap& x, const Fmap& z,
                                             const std::vector<double>& r_out, std::size_t j, double eps,
                                             double& bias_r) {
  std::vector<double> r_in(x.v.size(), 0.0);
  for (std::size_t e = 0; e < j; ++e) {
    for (std::size_t f = 0; f < L.f; ++f) {
      for (std::size_t t = 0; t < x.t; ++t) {
        const std::size_t o = (e * L.f + f) * x.t + t;
        const double s = r_out[o] / stabilize(z.v[o], eps);
        bias_r += L.b[f] * s;
        for (std::size_t c = 0; c < L.c; ++c) {
          for (std::size_t k = 0; k < L.k; ++k) {
            const std::ptrdiff_t p = static_cast<std::ptrdiff_t>(t + k) - static_cast<std::ptrdiff_t>(L.pad.left);
            if (p < 0 || p >= static_cast<std::ptrdiff_t>(x.t)) continue;
            const std::size_t i = (e * x.c + c) * x.t + static_cast<std::size_t>(p);
            r_in[i] += L.w[(f * L.c + c) * L.k + k] * x.v[i] * s;
          }
        }
      }
    }
  }
  return r_in;
}

struct PoolResult {
  Fmap y;
  std::vector<std::size_t> winner;  // input flat index per output
};

inline PoolResult lrp_pool_forward(const Fmap& x, std::size_t j, std::size_t stride, std::size_t pad_right) {
  const std::size_t t_out = (x.t + pad_right - 2) / stride + 1;
  PoolResult p{{x.c, t_out, std::vector<double>(j * x.c * t_out)}, std::vector<std::size_t>(j * x.c * t_out)};
  for (std::size_t row = 0; row < j * x.c; ++row) {
    for (std::size_t t = 0; t < t_out; ++t) {
      const std::size_t a = t * stride;
      std::size_t best = a;
      if (a + 1 < x.t && x.v[row * x.t + a + 1] > x.v[row * x.t + a]) best = a + 1;
      p.y.v[row * t_out + t] = x.v[row * x.t + best];
      p.winner[row * t_out + t] = row * x.t + best;
    }
  }
  return p;
}

inline std::vector<double> lrp_pool_backward(const PoolResult& p, std::size_t in_size, const std::vector<double>& r) {
  std::vector<double> out(in_size, 0.0);
  for (std::size_t i = 0; i < r.size(); ++i) out[p.winner[i]] += r[i];
  return out;
}

template <typename T>
LrpConv fold_block(const ConvBlock<T>& blk, std::size_t k_size) {
  LrpConv L;
  L.f = blk.weight.dim(0);
  L.c = blk.weight.dim(1);
  L.k = blk.weight.dim(2);
  L.pad = ConvPadding::same(k_size);
  L.w.resize(L.f * L.c * L.k);
  L.b.resize(L.f);
  for (std::size_t f = 0; f < L.f; ++f) {
    const double a = static_cast<double>(blk.gamma[f]) /
                     std::sqrt(static_cast<double>(blk.bn.running_var[f]) + static_cast<double>(blk.bn.eps));
    for (std::size_t i = 0; i < L.c * L.k; ++i) L.w[f * L.c * L.k + i] = a * static_cast<double>(blk.weight[f * L.c * L.k + i]);
    L.b[f] = a * (static_cast<double>(blk.bias[f]) - static_cast<double>(blk.bn.running_mean[f])) +
             static_cast<double>(blk.beta[f]);
  }
  return L;
}

}  // namespace detail

// Relevance of input x [J*T] for output `component` of an attention-free CNN
// in eval mode. The explained scalar includes the output calibration; the
// calibration offset and every bias keep their own share of relevance.
template <typename T>
RelevanceMap lrp_epsilon(const AttentionCnn<T>& model, const std::vector<double>& x, std::size_t component,
                         double eps = kDefaultLrpEps) {
  const auto& cfg = model.config();
  if (cfg.use_se || cfg.use_sa) throw LrpUnsupportedError("lrp_epsilon: only the attention-free CNN is supported");
  if (model.mode() != Mode::eval) throw std::logic_error("lrp_epsilon: model must be in eval mode");
  const std::size_t J = cfg.n_electrodes, T0 = cfg.n_timepoints;
  if (x.size() != J * T0) throw ShapeError("lrp_epsilon: input must have J*T values");
  const std::size_t n_out = output_dim(cfg.task);
  if (component >= n_out) throw std::out_of_range("lrp_epsilon: output component out of range");
  const double slope = cfg.leaky_slope;
  const auto lrelu = [slope](double v) { return v > 0 ? v : slope * v; };

  // Forward pass with every intermediate kept.
  struct BlockTape {
    detail::LrpConv conv;
    detail::Fmap in, z;
    std::size_t act_size = 0;
    detail::PoolResult pool;
  };
  struct GroupTape {
    std::vector<BlockTape> blocks;
    detail::LrpConv skip;
    detail::Fmap in, skip_z;
    detail::PoolResult skip_pool;
    detail::Fmap main, out;
  };
  std::vector<GroupTape> tape;
  detail::Fmap h{1, T0, x};
  for (const auto& grp : model.groups()) {
    GroupTape gt;
    gt.in = h;
    for (const auto& blk : grp.blocks) {
      BlockTape bt;
      bt.conv = detail::fold_block(blk, cfg.kernel_size);
      bt.in = h;
      bt.z = detail::lrp_conv_forward(bt.conv, h, J);
      detail::Fmap act = bt.z;
      for (double& v : act.v) v = lrelu(v);
      bt.act_size = act.v.size();
      bt.pool = detail::lrp_pool_forward(act, J, blk.pool_stride, blk.pool_stride == 2 ? 0 : 1);
      h = bt.pool.y;
      gt.blocks.push_back(std::move(bt));
    }
    gt.main = h;
    gt.skip.f = grp.skip_weight.dim(0);
    gt.skip.c = grp.skip_weight.dim(1);
    gt.skip.k = 1;
    gt.skip.w.assign(grp.skip_weight.values().begin(), grp.skip_weight.values().end());
    gt.skip.b.assign(grp.skip_bias.values().begin(), grp.skip_bias.values().end());
    gt.skip_z = detail::lrp_conv_forward(gt.skip, gt.in, J);
    gt.skip_pool = detail::lrp_pool_forward(gt.skip_z, J, 2, 0);
    gt.out = gt.main;
    for (std::size_t i = 0; i < gt.out.v.size(); ++i) gt.out.v[i] += gt.skip_pool.y.v[i];
    h = gt.out;
    tape.push_back(std::move(gt));
  }
  // Projection per electrode, then the head over all electrodes.
  const std::size_t d_model = h.c * h.t, P = cfg.proj_dim;
  const auto& pw = model.proj_weight().values();
  const auto& pb = model.proj_bias().values();
  std::vector<double> proj(J * P);
  for (std::size_t e = 0; e < J; ++e) {
    for (std::size_t p = 0; p < P; ++p) {
      double z = static_cast<double>(pb[p]);
      for (std::size_t d = 0; d < d_model; ++d) z += static_cast<double>(pw[p * d_model + d]) * h.v[e * d_model + d];
      proj[e * P + p] = z;
    }
  }
  const auto& hw = model.head_weight().values();
  const auto& hb = model.head_bias().values();
  const std::size_t n_in = J * P;
  double head = static_cast<double>(hb[component]);
  for (std::size_t i = 0; i < n_in; ++i) head += static_cast<double>(hw[component * n_in + i]) * proj[i];
  const double scale_c = static_cast<double>(model.output_scale()[component]);
  const double offset_c = static_cast<double>(model.output_offset()[component]);

  RelevanceMap out;
  out.electrodes = J;
  out.timepoints = T0;
  out.component = component;
  out.eps = eps;
  out.output = scale_c * head + offset_c;

  // Output calibration: y = scale*head + offset.
  double bias_r = 0;
  {
    const double s = out.output / detail::stabilize(out.output, eps);
    bias_r += offset_c * s;
    // Relevance reaching the head pre-activation.
    const double r_head = scale_c * head * s;
    const double sh = r_head / detail::stabilize(head, eps);
    bias_r += static_cast<double>(hb[component]) * sh;
    std::vector<double> r_proj(n_in);
    for (std::size_t i = 0; i < n_in; ++i) r_proj[i] = static_cast<double>(hw[component * n_in + i]) * proj[i] * sh;
    // Projection back to group-4 features.
    std::vector<double> r_h(J * d_model, 0.0);
    for (std::size_t e = 0; e < J; ++e) {
      for (std::size_t p = 0; p < P; ++p) {
        const double sp = r_proj[e * P + p] / detail::stabilize(proj[e * P + p], eps);
        bias_r += static_cast<double>(pb[p]) * sp;
        for (std::size_t d = 0; d < d_model; ++d) {
          r_h[e * d_model + d] += static_cast<double>(pw[p * d_model + d]) * h.v[e * d_model + d] * sp;
        }
      }
    }
    // Residual groups in reverse.
    std::vector<double> r = std::move(r_h);
    for (std::size_t g = tape.size(); g-- > 0;) {
      auto& gt = tape[g];
      std::vector<double> r_main(r.size()), r_skip(r.size());
      for (std::size_t i = 0; i < r.size(); ++i) {
        const double s = r[i] / detail::stabilize(gt.out.v[i], eps);
        r_main[i] = gt.main.v[i] * s;
        r_skip[i] = gt.skip_pool.y.v[i] * s;
      }
      auto r_skip_z = detail::lrp_pool_backward(gt.skip_pool, gt.skip_z.v.size(), r_skip);
      auto r_in = detail::lrp_conv_backward(gt.skip, gt.in, gt.skip_z, r_skip_z, J, eps, bias_r);
      std::vector<double> rm = std::move(r_main);
      for (std::size_t b = gt.blocks.size(); b-- > 0;) {
        auto& bt = gt.blocks[b];
        auto r_act = detail::lrp_pool_backward(bt.pool, bt.act_size, rm);  // leaky ReLU passes relevance through
        rm = detail::lrp_conv_backward(bt.conv, bt.in, bt.z, r_act, J, eps, bias_r);
      }
      for (std::size_t i = 0; i < r_in.size(); ++i) r_in[i] += rm[i];
      r = std::move(r_in);
    }
    out.values = std::move(r);
  }
  out.bias_relevance = bias_r;
  return out;
}

inline RelevanceMap lrp_epsilon(const Checkpoint& ckpt, const std::vector<double>& x, std::size_t component,
                                double eps = kDefaultLrpEps) {
  auto model = model_from_checkpoint<double>(ckpt);
  return lrp_epsilon(model, x, component, eps);
}

}  // namespace eegatt
