#pragma once

// The Attention-CNN: residual groups of temporal conv blocks, a shared SE
// block after every conv block, one pooled self-attention block before the
// prediction head.
//
// Feature layout is [B, J, F, T]. Convolutions run along T with kernels
// shared across electrodes, so the electrode axis survives to the head and
// attention can act on it at every depth.

#include <map>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "eegatt/attention.hpp"
#include "eegatt/losses.hpp"
#include "eegatt/ops.hpp"
#include "eegatt/random.hpp"

namespace eegatt {

struct ModelConfig {
  std::size_t n_electrodes = 128;
  std::size_t n_timepoints = 500;
  std::size_t n_conv_blocks = 12;
  std::size_t residual_period = 3;
  std::size_t hidden_features = 64;
  std::size_t kernel_size = 64;
  bool use_se = true;
  bool use_sa = true;
  TaskKind task = TaskKind::position;
  std::size_t se_ratio = 4;
  std::size_t sa_dk = 64;
  std::size_t proj_dim = 128;
  SaPooling sa_pooling = SaPooling::received;
  double leaky_slope = 0.01;
  std::uint64_t seed = 0;

  std::size_t n_groups() const { return n_conv_blocks / residual_period; }

  void validate() const;

  // Temporal length at the input and after every residual group.
  std::vector<std::size_t> temporal_trace() const {
    std::vector<std::size_t> trace{n_timepoints};
    std::size_t t = n_timepoints;
    for (std::size_t g = 0; g < n_groups(); ++g) {
      t = t < 2 ? 0 : (t - 2) / 2 + 1;
      trace.push_back(t);
    }
    return trace;
  }

  std::size_t final_length() const { return temporal_trace().back(); }
  std::size_t d_model() const { return hidden_features * final_length(); }
  std::size_t head_inputs() const { return n_electrodes * (use_sa ? sa_dk : proj_dim); }

  std::string to_kv() const {
    std::ostringstream os;
    os << "n_electrodes=" << n_electrodes << '\n'
       << "n_timepoints=" << n_timepoints << '\n'
       << "n_conv_blocks=" << n_conv_blocks << '\n'
       << "residual_period=" << residual_period << '\n'
       << "hidden_features=" << hidden_features << '\n'
       << "kernel_size=" << kernel_size << '\n'
       << "use_se=" << (use_se ? 1 : 0) << '\n'
       << "use_sa=" << (use_sa ? 1 : 0) << '\n'
       << "task=" << to_string(task) << '\n'
       << "se_ratio=" << se_ratio << '\n'
       << "sa_dk=" << sa_dk << '\n'
       << "proj_dim=" << proj_dim << '\n'
       << "sa_pooling=" << to_string(sa_pooling) << '\n'
       << "leaky_slope=" << std::hexfloat << leaky_slope << std::defaultfloat << '\n'
       << "seed=" << seed << '\n';
    return os.str();
  }

  static ModelConfig from_kv(const std::string& text) {
    ModelConfig c;
    std::istringstream is(text);
    std::string line;
    while (std::getline(is, line)) {
      if (line.empty()) continue;
      const auto eq = line.find('=');
      if (eq == std::string::npos) throw std::invalid_argument("model config: malformed line '" + line + "'");
      const std::string key = line.substr(0, eq), val = line.substr(eq + 1);
      auto as_size = [&] { return static_cast<std::size_t>(std::stoull(val)); };
      if (key == "n_electrodes") c.n_electrodes = as_size();
      else if (key == "n_timepoints") c.n_timepoints = as_size();
      else if (key == "n_conv_blocks") c.n_conv_blocks = as_size();
      else if (key == "residual_period") c.residual_period = as_size();
      else if (key == "hidden_features") c.hidden_features = as_size();
      else if (key == "kernel_size") c.kernel_size = as_size();
      else if (key == "use_se") c.use_se = val == "1";
      else if (key == "use_sa") c.use_sa = val == "1";
      else if (key == "task") c.task = task_from_string(val);
      else if (key == "se_ratio") c.se_ratio = as_size();
      else if (key == "sa_dk") c.sa_dk = as_size();
      else if (key == "proj_dim") c.proj_dim = as_size();
      else if (key == "sa_pooling") c.sa_pooling = sa_pooling_from_string(val);
      else if (key == "leaky_slope") c.leaky_slope = std::strtod(val.c_str(), nullptr);
      else if (key == "seed") c.seed = std::stoull(val);
      else throw std::invalid_argument("model config: unknown key '" + key + "'");
    }
    c.validate();
    return c;
  }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

inline void ModelConfig::validate() const {
  auto fail = [](const std::string& m) { throw std::invalid_argument("invalid model config: " + m); };
  if (n_electrodes < 1) fail("n_electrodes must be >= 1");
  if (n_conv_blocks < 1 || residual_period < 1) fail("need at least one conv block");
  if (n_conv_blocks % residual_period != 0) fail("n_conv_blocks must be divisible by residual_period");
  if (kernel_size < 1) fail("kernel_size must be >= 1");
  if (hidden_features < 1) fail("hidden_features must be >= 1");
  if (se_ratio < 1) fail("se_ratio must be >= 1");
  if (sa_dk < 1 || proj_dim < 1) fail("attention dimensions must be >= 1");
  auto trace = temporal_trace();
  for (std::size_t g = 0; g + 1 < trace.size(); ++g) {
    if (trace[g] < 2) fail("n_timepoints too short for " + std::to_string(n_groups()) + " pooling stages");
  }
}

// Row labels of the four-way ablation.
inline std::string variant_label(bool use_se, bool use_sa) {
  if (use_se && use_sa) return "CNN + both";
  if (use_se) return "CNN + SE";
  if (use_sa) return "CNN + SA";
  return "CNN";
}

struct NamedTensor {
  std::string name;
  Shape shape;
  std::vector<double> data;
};

template <typename T>
struct ConvBlock {
  Tensor<T> weight;  // [F, F_in, K]
  Tensor<T> bias;    // [F]
  Tensor<T> gamma;
  Tensor<T> beta;
  BatchNormState<T> bn;
  std::size_t pool_stride = 1;
  std::shared_ptr<SeBlock<T>> se;  // same object at every insertion point
};

template <typename T>
struct ResidualGroup {
  std::vector<ConvBlock<T>> blocks;
  Tensor<T> skip_weight;  // [F, F_in, 1]
  Tensor<T> skip_bias;
};

template <typename T>
struct ForwardResult {
  Tensor<T> prediction;
  std::optional<ScaleTrace> trace;
};

template <typename T>
class AttentionCnn {
 public:
  explicit AttentionCnn(ModelConfig config);

  AttentionCnn(const AttentionCnn&) = delete;
  AttentionCnn& operator=(const AttentionCnn&) = delete;
  AttentionCnn(AttentionCnn&&) noexcept = default;
  AttentionCnn& operator=(AttentionCnn&&) noexcept = default;

  const ModelConfig& config() const { return config_; }
  void train() { mode_ = Mode::train; }
  void eval() { mode_ = Mode::eval; }
  Mode mode() const { return mode_; }

  // x: [B, J, T]. Prediction is [B, 2] for position, [B, 1] otherwise.
  ForwardResult<T> forward(const Tensor<T>& x, bool record_scales = false);

  // One group's main path plus skip path: main(x) + skip(x).
  Tensor<T> residual_group(const Tensor<T>& x, std::size_t group, ScaleTrace* trace, std::size_t& layer);

  std::vector<std::pair<std::string, Tensor<T>>> named_parameters() const;
  std::vector<Tensor<T>> parameters() const {
    std::vector<Tensor<T>> out;
    for (auto& [name, t] : named_parameters()) out.push_back(t);
    return out;
  }
  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (auto& [name, t] : named_parameters()) n += t.size();
    return n;
  }
  void zero_grad() {
    for (auto& [name, t] : named_parameters()) t.zero_grad();
  }

  // Parameters and buffers (batch-norm statistics, output calibration).
  std::vector<NamedTensor> state() const;
  void load_state(const std::vector<NamedTensor>& state);

  // Constant per-output calibration applied after the head:
  // prediction = head(...) * scale + offset.
  void set_output_affine(std::vector<T> scale, std::vector<T> offset) {
    if (scale.size() != output_scale_.size() || offset.size() != output_offset_.size()) {
      throw ShapeError("output affine size mismatch");
    }
    output_scale_ = std::move(scale);
    output_offset_ = std::move(offset);
  }
  const std::vector<T>& output_scale() const { return output_scale_; }
  const std::vector<T>& output_offset() const { return output_offset_; }

  const std::vector<ResidualGroup<T>>& groups() const { return groups_; }
  std::vector<ResidualGroup<T>>& groups() { return groups_; }
  const std::shared_ptr<SeBlock<T>>& se() const { return se_; }
  const std::optional<SaBlock<T>>& sa() const { return sa_; }
  const Tensor<T>& proj_weight() const { return proj_w_; }
  const Tensor<T>& proj_bias() const { return proj_b_; }
  const Tensor<T>& head_weight() const { return head_w_; }
  const Tensor<T>& head_bias() const { return head_b_; }

  // SE block used at conv block `index` (global numbering), or null.
  const SeBlock<T>* se_at(std::size_t index) const {
    const std::size_t p = config_.residual_period;
    return groups_.at(index / p).blocks.at(index % p).se.get();
  }

 private:
  Tensor<T> init_param(const std::string& name, Shape shape, std::size_t fan_in, double gain);

  ModelConfig config_;
  Mode mode_ = Mode::train;
  std::vector<ResidualGroup<T>> groups_;
  std::shared_ptr<SeBlock<T>> se_;
  std::optional<SaBlock<T>> sa_;
  Tensor<T> proj_w_, proj_b_, head_w_, head_b_;
  std::vector<T> output_scale_, output_offset_;
};

inline constexpr double kHeadGain = 0.01;

template <typename T>
Tensor<T> AttentionCnn<T>::init_param(const std::string& name, Shape shape, std::size_t fan_in, double gain) {
  // One stream per parameter name, so ablation variants built from the same
  // seed share identical weights for the components they have in common.
  Rng rng(stream_seed(config_.seed, {fnv1a(name)}));
  const double bound = gain * std::sqrt(3.0 / static_cast<double>(fan_in));
  std::vector<T> data(numel(shape));
  for (T& v : data) v = static_cast<T>(rng.uniform(-bound, bound));
  return Tensor<T>(std::move(shape), std::move(data), true);
}

template <typename T>
AttentionCnn<T>::AttentionCnn(ModelConfig config) : config_(std::move(config)) {
  config_.validate();
  const auto& c = config_;
  const double conv_gain = std::sqrt(2.0 / (1.0 + c.leaky_slope * c.leaky_slope));
  auto bias_init = [&](const std::string& name, std::size_t n, std::size_t fan_in) {
    // Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)), i.e. gain sqrt(1/3).
    return init_param(name, {n}, fan_in, std::sqrt(1.0 / 3.0));
  };

  if (c.use_se) {
    se_ = std::make_shared<SeBlock<T>>();
    const std::size_t hidden = se_hidden_width(c.n_electrodes, c.se_ratio);
    se_->ratio = c.se_ratio;
    se_->w1 = init_param("se.w1", {hidden, c.n_electrodes}, c.n_electrodes, 1.0);
    se_->w2 = init_param("se.w2", {c.n_electrodes, hidden}, hidden, 1.0);
  }

  std::size_t f_in = 1;
  for (std::size_t g = 0; g < c.n_groups(); ++g) {
    ResidualGroup<T> group;
    const std::string gp = "groups." + std::to_string(g);
    const std::size_t group_in = f_in;
    for (std::size_t b = 0; b < c.residual_period; ++b) {
      const std::string bp = gp + ".blocks." + std::to_string(b);
      ConvBlock<T> blk;
      const std::size_t fan_in = f_in * c.kernel_size;
      blk.weight = init_param(bp + ".conv.weight", {c.hidden_features, f_in, c.kernel_size}, fan_in, conv_gain);
      blk.bias = bias_init(bp + ".conv.bias", c.hidden_features, fan_in);
      blk.gamma = Tensor<T>({c.hidden_features}, T(1), true);
      blk.beta = Tensor<T>({c.hidden_features}, T(0), true);
      blk.bn = BatchNormState<T>(c.hidden_features);
      blk.pool_stride = (b + 1 == c.residual_period) ? 2 : 1;
      blk.se = se_;
      group.blocks.push_back(std::move(blk));
      f_in = c.hidden_features;
    }
    group.skip_weight = init_param(gp + ".skip.weight", {c.hidden_features, group_in, 1}, group_in, 1.0);
    group.skip_bias = bias_init(gp + ".skip.bias", c.hidden_features, group_in);
    groups_.push_back(std::move(group));
  }

  const std::size_t d_model = c.d_model();
  proj_w_ = init_param("proj.weight", {c.proj_dim, d_model}, d_model, 1.0);
  proj_b_ = bias_init("proj.bias", c.proj_dim, d_model);
  if (c.use_sa) {
    SaBlock<T> sa;
    sa.w_q = init_param("sa.w_q", {c.sa_dk, c.proj_dim}, c.proj_dim, 1.0);
    sa.w_k = init_param("sa.w_k", {c.sa_dk, c.proj_dim}, c.proj_dim, 1.0);
    sa.w_v = init_param("sa.w_v", {c.sa_dk, c.proj_dim}, c.proj_dim, 1.0);
    sa.pooling = c.sa_pooling;
    sa_ = std::move(sa);
  }
  const std::size_t outs = output_dim(c.task);
  // Small head gain: the prediction starts near the output calibration offset.
  head_w_ = init_param("head.weight", {outs, c.head_inputs()}, c.head_inputs(), kHeadGain);
  head_b_ = bias_init("head.bias", outs, c.head_inputs());
  output_scale_.assign(outs, T(1));
  output_offset_.assign(outs, T(0));
}

template <typename T>
Tensor<T> AttentionCnn<T>::residual_group(const Tensor<T>& x, std::size_t group, ScaleTrace* trace, std::size_t& layer) {
  auto& grp = groups_.at(group);
  const T slope = static_cast<T>(config_.leaky_slope);
  Tensor<T> h = x;
  for (auto& blk : grp.blocks) {
    h = conv1d_time(h, blk.weight, blk.bias, 1, ConvPadding::same(config_.kernel_size));
    h = batchnorm(h, blk.gamma, blk.beta, blk.bn, mode_, 2);
    h = leaky_relu(h, slope);
    h = blk.pool_stride == 2 ? maxpool1d(h, 2, 2) : maxpool1d(h, 2, 1, 1);
    if (blk.se) {
      auto se_out = se_forward(h, *blk.se);
      if (trace) trace->record(ScaleSource::se, layer, se_out.scales);
      h = se_out.features;
    }
    ++layer;
  }
  Tensor<T> skip = maxpool1d(conv1d_time(x, grp.skip_weight, grp.skip_bias, 1, 0), 2, 2);
  return add(h, skip);
}

template <typename T>
ForwardResult<T> AttentionCnn<T>::forward(const Tensor<T>& x, bool record_scales) {
  const auto& c = config_;
  if (x.rank() != 3 || x.dim(1) != c.n_electrodes || x.dim(2) != c.n_timepoints) {
    throw ShapeError("forward: expected [B, " + std::to_string(c.n_electrodes) + ", " +
                     std::to_string(c.n_timepoints) + "], got " + shape_str(x.shape()));
  }
  const std::size_t batch = x.dim(0);
  ForwardResult<T> result;
  if (record_scales) result.trace.emplace();
  ScaleTrace* trace = record_scales ? &*result.trace : nullptr;

  Tensor<T> h = reshape(x, {batch, c.n_electrodes, 1, c.n_timepoints});
  std::size_t layer = 0;
  for (std::size_t g = 0; g < groups_.size(); ++g) h = residual_group(h, g, trace, layer);

  h = reshape(h, {batch, c.n_electrodes, c.d_model()});
  h = linear(h, proj_w_, proj_b_);
  if (sa_) {
    auto sa_out = sa_forward(h, *sa_);
    if (trace) trace->record(ScaleSource::sa, layer, sa_out.scales);
    h = sa_out.features;
  }
  h = reshape(h, {batch, c.head_inputs()});
  h = linear(h, head_w_, head_b_);
  result.prediction = column_affine(h, output_scale_, output_offset_);
  return result;
}

template <typename T>
std::vector<std::pair<std::string, Tensor<T>>> AttentionCnn<T>::named_parameters() const {
  std::vector<std::pair<std::string, Tensor<T>>> out;
  for (std::size_t g = 0; g < groups_.size(); ++g) {
    const std::string gp = "groups." + std::to_string(g);
    for (std::size_t b = 0; b < groups_[g].blocks.size(); ++b) {
      const std::string bp = gp + ".blocks." + std::to_string(b);
      const auto& blk = groups_[g].blocks[b];
      out.emplace_back(bp + ".conv.weight", blk.weight);
      out.emplace_back(bp + ".conv.bias", blk.bias);
      out.emplace_back(bp + ".bn.gamma", blk.gamma);
      out.emplace_back(bp + ".bn.beta", blk.beta);
    }
    out.emplace_back(gp + ".skip.weight", groups_[g].skip_weight);
    out.emplace_back(gp + ".skip.bias", groups_[g].skip_bias);
  }
  if (se_) {
    out.emplace_back("se.w1", se_->w1);
    out.emplace_back("se.w2", se_->w2);
  }
  out.emplace_back("proj.weight", proj_w_);
  out.emplace_back("proj.bias", proj_b_);
  if (sa_) {
    out.emplace_back("sa.w_q", sa_->w_q);
    out.emplace_back("sa.w_k", sa_->w_k);
    out.emplace_back("sa.w_v", sa_->w_v);
  }
  out.emplace_back("head.weight", head_w_);
  out.emplace_back("head.bias", head_b_);
  return out;
}

template <typename T>
std::vector<NamedTensor> AttentionCnn<T>::state() const {
  std::vector<NamedTensor> out;
  auto put = [&](std::string name, Shape shape, const auto& values) {
    out.push_back({std::move(name), std::move(shape), std::vector<double>(values.begin(), values.end())});
  };
  for (auto& [name, t] : named_parameters()) put(name, t.shape(), t.values());
  for (std::size_t g = 0; g < groups_.size(); ++g) {
    for (std::size_t b = 0; b < groups_[g].blocks.size(); ++b) {
      const std::string bp = "groups." + std::to_string(g) + ".blocks." + std::to_string(b) + ".bn.";
      const auto& bn = groups_[g].blocks[b].bn;
      put(bp + "running_mean", {bn.running_mean.size()}, bn.running_mean);
      put(bp + "running_var", {bn.running_var.size()}, bn.running_var);
      put(bp + "batches_tracked", {1}, std::vector<double>{static_cast<double>(bn.batches_tracked)});
    }
  }
  put("output.scale", {output_scale_.size()}, output_scale_);
  put("output.offset", {output_offset_.size()}, output_offset_);
  return out;
}

template <typename T>
void AttentionCnn<T>::load_state(const std::vector<NamedTensor>& state) {
  std::map<std::string, const NamedTensor*> by_name;
  for (const auto& nt : state) by_name[nt.name] = &nt;
  auto fetch = [&](const std::string& name, std::size_t expected) -> const NamedTensor& {
    auto it = by_name.find(name);
    if (it == by_name.end()) throw std::runtime_error("checkpoint is missing tensor '" + name + "'");
    if (it->second->data.size() != expected) {
      throw std::runtime_error("checkpoint tensor '" + name + "' has wrong size");
    }
    return *it->second;
  };
  auto copy_into = [](const NamedTensor& src, auto& dst) {
    for (std::size_t i = 0; i < src.data.size(); ++i) dst[i] = static_cast<T>(src.data[i]);
  };
  for (auto& [name, t] : named_parameters()) {
    auto& src = fetch(name, t.size());
    if (src.shape != t.shape()) throw std::runtime_error("checkpoint tensor '" + name + "' has wrong shape");
    Tensor<T> handle = t;
    copy_into(src, handle.values());
  }
  for (std::size_t g = 0; g < groups_.size(); ++g) {
    for (std::size_t b = 0; b < groups_[g].blocks.size(); ++b) {
      const std::string bp = "groups." + std::to_string(g) + ".blocks." + std::to_string(b) + ".bn.";
      auto& bn = groups_[g].blocks[b].bn;
      copy_into(fetch(bp + "running_mean", bn.running_mean.size()), bn.running_mean);
      copy_into(fetch(bp + "running_var", bn.running_var.size()), bn.running_var);
      bn.batches_tracked = static_cast<std::uint64_t>(fetch(bp + "batches_tracked", 1).data[0]);
    }
  }
  copy_into(fetch("output.scale", output_scale_.size()), output_scale_);
  copy_into(fetch("output.offset", output_offset_.size()), output_offset_);
}

// Same configuration with the requested attention blocks; components shared
// with other variants get the same initial weights.
inline ModelConfig variant_config(ModelConfig base, bool use_se, bool use_sa) {
  base.use_se = use_se;
  base.use_sa = use_sa;
  return base;
}

template <typename T>
AttentionCnn<T> variant(const AttentionCnn<T>& model, bool use_se, bool use_sa) {
  return AttentionCnn<T>(variant_config(model.config(), use_se, use_sa));
}

}  // namespace eegatt
