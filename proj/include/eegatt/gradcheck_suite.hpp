#pragma once

// Finite-difference checks for every differentiable op and for an end-to-end
// tiny model, in double precision.

#include <functional>
#include <string>
#include <vector>

#include "eegatt/attention.hpp"
#include "eegatt/gradcheck.hpp"
#include "eegatt/losses.hpp"
#include "eegatt/model.hpp"
#include "eegatt/ops.hpp"
#include "eegatt/random.hpp"

namespace eegatt {

inline constexpr double kOpGradTolerance = 1e-6;
inline constexpr double kModelGradTolerance = 1e-4;

struct GradcheckResult {
  std::string name;
  double max_rel_error = 0;
  double tolerance = 0;
  bool passed() const { return max_rel_error < tolerance; }
};

// Tiny end-to-end configuration: J=4, T=32, F=8, three conv blocks.
inline ModelConfig gradcheck_model_config(bool use_se, bool use_sa) {
  ModelConfig c;
  c.n_electrodes = 4;
  c.n_timepoints = 32;
  c.n_conv_blocks = 3;
  c.residual_period = 3;
  c.hidden_features = 8;
  c.kernel_size = 5;
  c.se_ratio = 2;
  c.sa_dk = 6;
  c.proj_dim = 6;
  c.use_se = use_se;
  c.use_sa = use_sa;
  c.seed = 11;
  return c;
}

namespace detail {

class GradcheckFixture {
 public:
  explicit GradcheckFixture(std::uint64_t seed) : rng_(seed) {}

  Tensor<double> normal(Shape shape, double sd = 1.0) {
    std::vector<double> d(numel(shape));
    for (double& v : d) v = sd * rng_.normal();
    return Tensor<double>(std::move(shape), std::move(d), true);
  }

  // Values with |v| in [margin, margin + 1]; keeps kinks out of reach of h.
  Tensor<double> away_from_zero(Shape shape, double margin = 0.05) {
    std::vector<double> d(numel(shape));
    for (double& v : d) v = (rng_.uniform() < 0.5 ? -1.0 : 1.0) * (margin + rng_.uniform());
    return Tensor<double>(std::move(shape), std::move(d), true);
  }

  Tensor<double> positive(Shape shape, double lo = 0.5, double hi = 1.5) {
    std::vector<double> d(numel(shape));
    for (double& v : d) v = rng_.uniform(lo, hi);
    return Tensor<double>(std::move(shape), std::move(d), true);
  }

  // Scalar sum(y * P) with a fixed random P, so every output coordinate
  // carries a distinct upstream gradient.
  Tensor<double> probe(const Tensor<double>& y) {
    if (probe_.size() < y.size()) {
      while (probe_.size() < y.size()) probe_.push_back(rng_.normal());
    }
    return sum(mul(y, Tensor<double>(y.shape(), std::vector<double>(probe_.begin(), probe_.begin() + static_cast<std::ptrdiff_t>(y.size())))));
  }

 private:
  Rng rng_;
  std::vector<double> probe_;
};

}  // namespace detail

inline std::vector<GradcheckResult> run_gradcheck_suite(std::uint64_t seed = 2024) {
  std::vector<GradcheckResult> out;
  detail::GradcheckFixture fx(seed);
  auto op = [&](const std::string& name, std::function<Tensor<double>()> loss, std::vector<Tensor<double>> wrt) {
    out.push_back({name, check_gradients<double>(loss, std::move(wrt)), kOpGradTolerance});
  };

  {
    auto a = fx.normal({3, 4}), b = fx.normal({3, 4});
    op("add", [&] { return fx.probe(add(a, b)); }, {a, b});
    op("sub", [&] { return fx.probe(sub(a, b)); }, {a, b});
    op("mul", [&] { return fx.probe(mul(a, b)); }, {a, b});
    op("scale", [&] { return fx.probe(scale(a, 1.7)); }, {a});
    op("add_scalar", [&] { return fx.probe(add_scalar(a, -0.3)); }, {a});
    op("reshape", [&] { return fx.probe(reshape(a, {2, 6})); }, {a});
    op("sum", [&] { return sum(mul(a, a)); }, {a});
    op("mean", [&] { return mean(mul(a, b)); }, {a, b});
  }
  {
    auto x = fx.normal({2, 3, 2, 11}), k = fx.normal({4, 2, 5}), b = fx.normal({4});
    op("conv1d_time same", [&] { return fx.probe(conv1d_time(x, k, b, 1, ConvPadding::same(5))); }, {x, k, b});
    auto k4 = fx.normal({4, 2, 4});
    op("conv1d_time even kernel", [&] { return fx.probe(conv1d_time(x, k4, b, 1, ConvPadding::same(4))); }, {x, k4, b});
    op("conv1d_time stride 2", [&] { return fx.probe(conv1d_time(x, k, b, 2, ConvPadding{1, 2})); }, {x, k, b});
    auto k1 = fx.normal({4, 2, 1});
    op("conv1d_time pointwise", [&] { return fx.probe(conv1d_time(x, k1, b, 1, 0)); }, {x, k1, b});
  }
  {
    auto x = fx.normal({3, 4, 9});
    op("maxpool1d k2 s2", [&] { return fx.probe(maxpool1d(x, 2, 2)); }, {x});
    op("maxpool1d k2 s1 pad", [&] { return fx.probe(maxpool1d(x, 2, 1, 1)); }, {x});
  }
  {
    auto x = fx.normal({3, 2, 4, 5}), g = fx.positive({4}), b = fx.normal({4});
    BatchNormState<double> st(4);
    op("batchnorm train", [&] { return fx.probe(batchnorm(x, g, b, st, Mode::train, 2)); }, {x, g, b});
    BatchNormState<double> ev(4);
    for (std::size_t c = 0; c < 4; ++c) {
      ev.running_mean[c] = 0.1 * static_cast<double>(c);
      ev.running_var[c] = 0.5 + 0.2 * static_cast<double>(c);
    }
    ev.batches_tracked = 1;
    op("batchnorm eval", [&] { return fx.probe(batchnorm(x, g, b, ev, Mode::eval, 2)); }, {x, g, b});
  }
  {
    auto x = fx.away_from_zero({4, 7});
    op("leaky_relu", [&] { return fx.probe(leaky_relu(x, 0.01)); }, {x});
    op("relu", [&] { return fx.probe(relu(x)); }, {x});
    op("sigmoid", [&] { return fx.probe(sigmoid(x)); }, {x});
    op("softmax_rows", [&] { return fx.probe(softmax_rows(x)); }, {x});
  }
  {
    auto x = fx.normal({2, 3, 4, 5});
    op("global_avg_pool trailing", [&] { return fx.probe(global_avg_pool(x, {2, 3})); }, {x});
    op("global_avg_pool middle", [&] { return fx.probe(global_avg_pool(x, {1})); }, {x});
  }
  {
    auto x = fx.normal({2, 3, 5}), w = fx.normal({4, 5}), b = fx.normal({4});
    op("linear", [&] { return fx.probe(linear(x, w, b)); }, {x, w, b});
    auto a = fx.normal({2, 3, 4}), c = fx.normal({2, 5, 4});
    op("matmul_nt", [&] { return fx.probe(matmul_nt(a, c)); }, {a, c});
    auto u = fx.normal({2, 3, 4, 5}), s = fx.positive({2, 3});
    op("scale_electrodes", [&] { return fx.probe(scale_electrodes(u, s)); }, {u, s});
    auto y = fx.normal({3, 2});
    op("column_affine", [&] { return fx.probe(column_affine(y, std::vector<double>{2.0, -0.5}, std::vector<double>{1.0, 3.0})); }, {y});
  }
  {
    auto p = fx.normal({6, 2}), t = fx.normal({6, 2});
    // Shift so every difference sits inside one smooth branch.
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double d = p[i] - t[i];
      if (std::abs(std::abs(d) - 1.0) < 0.05) p[i] += 0.2;
    }
    op("smooth_l1", [&] { return smooth_l1(p, t); }, {p});
    auto ap = fx.away_from_zero({5, 1}), at = Tensor<double>({5, 1}, 0.0);
    op("angle_loss", [&] { return angle_loss(ap, at); }, {ap});
  }
  {
    SeBlock<double> se;
    se.ratio = 2;
    se.w1 = fx.normal({2, 4}, 0.5);
    se.w2 = fx.normal({4, 2}, 0.5);
    // relu inside SE: keep squeeze activations away from its kink.
    auto u = fx.normal({2, 4, 3, 6});
    bool kink = true;
    for (int tries = 0; kink && tries < 100; ++tries) {
      NoGradGuard ng;
      auto h = linear(global_avg_pool(u, {2, 3}), se.w1);
      kink = false;
      for (double v : h.values()) kink = kink || std::abs(v) < 1e-3;
      if (kink) se.w1 = fx.normal({2, 4}, 0.5);
    }
    op("se_forward", [&] { return fx.probe(se_forward(u, se).features); }, {u, se.w1, se.w2});
  }
  for (auto pooling : {SaPooling::received, SaPooling::given}) {
    SaBlock<double> sa;
    sa.w_q = fx.normal({3, 5}, 0.5);
    sa.w_k = fx.normal({3, 5}, 0.5);
    sa.w_v = fx.normal({3, 5}, 0.5);
    sa.pooling = pooling;
    auto u = fx.normal({2, 4, 5});
    op("sa_forward " + to_string(pooling), [&] { return fx.probe(sa_forward(u, sa).features); },
       {u, sa.w_q, sa.w_k, sa.w_v});
  }

  // End to end: every parameter of each ablation variant, train mode.
  for (bool se : {false, true}) {
    for (bool sa : {false, true}) {
      AttentionCnn<double> model(gradcheck_model_config(se, sa));
      model.train();
      auto x = fx.normal({3, 4, 32});
      auto target = fx.normal({3, 2});
      auto loss = [&] { return smooth_l1(model.forward(x).prediction, target); };
      out.push_back({"model " + variant_label(se, sa), check_gradients_normwise<double>(loss, model.parameters(), 1e-6),
                     kModelGradTolerance});
    }
  }
  return out;
}

}  // namespace eegatt
