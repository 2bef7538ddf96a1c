#pragma once

// Training and evaluation protocol: seeded mini-batch Adam, validation-based
// checkpoint selection, subject-leakage guard, and the four-variant
// multi-seed benchmark.

#include <chrono>
#include <cstdio>
#include <functional>
#include <iomanip>
#include <limits>
#include <sstream>

#include <nlohmann/json.hpp>

#include "eegatt/adam.hpp"
#include "eegatt/checkpoint.hpp"
#include "eegatt/data.hpp"
#include "eegatt/losses.hpp"
#include "eegatt/model.hpp"

namespace eegatt {

class LeakageError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct TrainConfig {
  std::size_t batch_size = 32;
  std::size_t epochs = 50;
  double lr = 1e-4;
  std::uint64_t seed = 0;
  double smooth_l1_beta = 1.0;
  double clip_grad_norm = 0.0;  // 0 disables clipping
  // Initialize the constant output calibration from training-label mean/std.
  bool calibrate_output = true;
  std::size_t eval_batch_size = 64;
  double px_per_degree = kDefaultPxPerDegree;

  void validate() const {
    if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
    if (epochs < 1) throw std::invalid_argument("epochs must be >= 1");
    if (!(lr >= 0)) throw std::invalid_argument("lr must be non-negative");
  }

  std::string to_kv() const {
    std::ostringstream os;
    os << std::setprecision(17) << "batch_size=" << batch_size << "\nepochs=" << epochs << "\nlr=" << lr
       << "\nseed=" << seed << "\nsmooth_l1_beta=" << smooth_l1_beta << "\nclip_grad_norm=" << clip_grad_norm
       << "\ncalibrate_output=" << calibrate_output << "\npx_per_degree=" << px_per_degree << '\n';
    return os.str();
  }
};

struct RunMetrics {
  std::uint64_t seed = 0;
  std::vector<double> train_loss;  // per epoch, mean over batches
  std::vector<double> val_metric;  // per epoch
  std::size_t selected_epoch = 0;  // 1-based
  double best_val_metric = std::numeric_limits<double>::infinity();
  std::optional<MetricReport> test;
  double wall_clock_s = 0;  // reported on the console, not serialized

  friend bool operator==(const RunMetrics& a, const RunMetrics& b) {
    return a.seed == b.seed && a.train_loss == b.train_loss && a.val_metric == b.val_metric &&
           a.selected_epoch == b.selected_epoch && a.best_val_metric == b.best_val_metric;
  }
};

inline nlohmann::ordered_json to_json(const RunMetrics& m) {
  nlohmann::ordered_json j;
  j["seed"] = m.seed;
  j["epochs"] = m.train_loss.size();
  j["train_loss"] = m.train_loss;
  j["val_metric"] = m.val_metric;
  j["selected_epoch"] = m.selected_epoch;
  j["best_val_metric"] = m.best_val_metric;
  if (m.test) j["test"] = to_json(*m.test);
  return j;
}

struct TrainResult {
  Checkpoint best;
  RunMetrics metrics;
};

using EpochCallback = std::function<void(std::size_t epoch, double train_loss, double val_metric)>;

// Predictions for every sample of `ds`, row-major [N, output_dim].
template <typename T>
std::vector<double> predict(AttentionCnn<T>& model, const EegDataset& ds, std::size_t batch_size = 64) {
  NoGradGuard no_grad;
  const Mode saved = model.mode();
  model.eval();
  std::vector<double> out;
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < ds.size(); start += batch_size) {
    idx.clear();
    for (std::size_t i = start; i < std::min(ds.size(), start + batch_size); ++i) idx.push_back(i);
    auto res = model.forward(batch_signals<T>(ds, idx));
    out.insert(out.end(), res.prediction.values().begin(), res.prediction.values().end());
  }
  if (saved == Mode::train) model.train();
  return out;
}

// Metric report for a flat prediction array laid out like predict().
inline MetricReport report_from_predictions(TaskKind task, const std::vector<double>& pred, const EegDataset& ds,
                                            double px_per_degree = kDefaultPxPerDegree) {
  if (dataset_task_for(task) != ds.task) {
    throw std::invalid_argument("evaluate: task " + to_string(task) + " does not match a " + to_string(ds.task) +
                                " dataset");
  }
  if (task == TaskKind::position) {
    std::vector<Point> p(ds.size()), t(ds.size());
    for (std::size_t i = 0; i < ds.size(); ++i) {
      p[i] = {pred[2 * i], pred[2 * i + 1]};
      const auto& l = std::get<PositionLabel>(ds.samples[i].label);
      t[i] = {l.x, l.y};
    }
    return position_report(p, t, px_per_degree);
  }
  std::vector<double> t(ds.size());
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const auto& l = std::get<DirectionLabel>(ds.samples[i].label);
    t[i] = task == TaskKind::amplitude ? l.amplitude : l.angle;
  }
  return scalar_report(task, pred, t);
}

template <typename T>
MetricReport evaluate(AttentionCnn<T>& model, const EegDataset& ds, double px_per_degree = kDefaultPxPerDegree) {
  if (dataset_task_for(model.config().task) != ds.task) {
    throw std::invalid_argument("evaluate: model task " + to_string(model.config().task) + " does not match a " +
                                to_string(ds.task) + " dataset");
  }
  return report_from_predictions(model.config().task, predict(model, ds), ds, px_per_degree);
}

inline MetricReport evaluate(const Checkpoint& ckpt, const EegDataset& ds, double px_per_degree = kDefaultPxPerDegree) {
  auto model = model_from_checkpoint<double>(ckpt);
  return evaluate(model, ds, px_per_degree);
}

inline void check_compatible(const ModelConfig& cfg, const EegDataset& ds, const char* what) {
  if (ds.n_electrodes != cfg.n_electrodes || ds.n_timepoints != cfg.n_timepoints) {
    throw std::invalid_argument(std::string(what) + " dataset shape does not match the model configuration");
  }
  if (dataset_task_for(cfg.task) != ds.task) {
    throw std::invalid_argument(std::string(what) + " dataset task does not match model task " + to_string(cfg.task));
  }
  if (ds.size() == 0) throw std::invalid_argument(std::string(what) + " dataset is empty");
}

template <typename T>
Tensor<T> task_loss(const Tensor<T>& pred, const Tensor<T>& target, TaskKind task, double beta) {
  return task == TaskKind::angle ? angle_loss(pred, target) : smooth_l1(pred, target, beta);
}

template <typename T>
TrainResult train(const ModelConfig& model_cfg, const TrainConfig& cfg, const EegDataset& train_ds,
                  const EegDataset& val_ds, const EpochCallback& on_epoch = nullptr) {
  cfg.validate();
  model_cfg.validate();
  check_compatible(model_cfg, train_ds, "training");
  check_compatible(model_cfg, val_ds, "validation");
  if (!subjects_disjoint(train_ds, val_ds)) {
    throw LeakageError("train/validation splits share subjects; refusing to train");
  }
  const auto t0 = std::chrono::steady_clock::now();

  AttentionCnn<T> model(model_cfg);
  const TaskKind task = model_cfg.task;
  const std::size_t d = output_dim(task);
  if (cfg.calibrate_output && task != TaskKind::angle) {
    std::vector<std::size_t> all(train_ds.size());
    std::iota(all.begin(), all.end(), std::size_t{0});
    auto y = batch_targets<double>(train_ds, all, task);
    std::vector<T> mu(d, 0), sd(d, 0);
    for (std::size_t c = 0; c < d; ++c) {
      double s = 0, s2 = 0;
      for (std::size_t i = 0; i < all.size(); ++i) s += y[i * d + c];
      const double m = s / static_cast<double>(all.size());
      for (std::size_t i = 0; i < all.size(); ++i) s2 += (y[i * d + c] - m) * (y[i * d + c] - m);
      const double v = s2 / static_cast<double>(all.size());
      mu[c] = static_cast<T>(m);
      sd[c] = static_cast<T>(v > 0 ? std::sqrt(v) : 1.0);
    }
    model.set_output_affine(sd, mu);
  }

  auto params = model.parameters();
  AdamState<T> adam;
  TrainResult result;
  result.metrics.seed = cfg.seed;
  result.best = make_checkpoint(model);

  std::vector<std::size_t> order(train_ds.size());
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(stream_seed(cfg.seed, {0xe90c4ULL, epoch}));
    rng.shuffle(order);
    model.train();
    double loss_sum = 0;
    std::size_t n_batches = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::span<const std::size_t> idx(order.data() + start, std::min(cfg.batch_size, order.size() - start));
      auto x = batch_signals<T>(train_ds, idx);
      auto y = batch_targets<T>(train_ds, idx, task);
      model.zero_grad();
      Tensor<T> loss;
      try {
        loss = task_loss(model.forward(x).prediction, y, task, cfg.smooth_l1_beta);
      } catch (const NumericError& e) {
        throw NumericError("training diverged at epoch " + std::to_string(epoch + 1) + ", batch " +
                           std::to_string(n_batches + 1) + ": " + e.what());
      }
      loss.backward();
      if (cfg.clip_grad_norm > 0) clip_grad_norm<T>(params, cfg.clip_grad_norm);
      adam_step<T>(params, adam, cfg.lr);
      loss_sum += static_cast<double>(loss.item());
      ++n_batches;
    }
    const double train_loss = loss_sum / static_cast<double>(n_batches);
    const double val = evaluate(model, val_ds, cfg.px_per_degree).primary();
    result.metrics.train_loss.push_back(train_loss);
    result.metrics.val_metric.push_back(val);
    if (val < result.metrics.best_val_metric) {
      result.metrics.best_val_metric = val;
      result.metrics.selected_epoch = epoch + 1;
      result.best = make_checkpoint(model);
    }
    if (on_epoch) on_epoch(epoch + 1, train_loss, val);
  }
  result.metrics.wall_clock_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return result;
}

// Directory name for a run: hex hash of the full configuration.
inline std::string config_hash(const ModelConfig& m, const TrainConfig& t, const std::string& extra = "") {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(fnv1a(m.to_kv() + t.to_kv() + extra)));
  return buf;
}

// ---------------------------------------------------------------------------
// Benchmark

struct Variant {
  bool use_se;
  bool use_sa;
  std::string label() const { return variant_label(use_se, use_sa); }
};

inline std::vector<Variant> all_variants() { return {{false, false}, {true, false}, {false, true}, {true, true}}; }

struct BenchmarkConfig {
  DatasetTask task = DatasetTask::position;
  std::vector<Variant> variants = all_variants();
  std::size_t n_seeds = 3;
  SynthConfig data;
  double noisy_fraction = 0.0;
  std::size_t noisy_per_sample = 2;
  ModelConfig model;
  TrainConfig train;
};

struct Aggregate {
  std::vector<double> values;
  double mean = 0;
  double std = 0;  // sample standard deviation; 0 for a single seed
};

inline Aggregate aggregate(std::vector<double> values) {
  Aggregate a;
  a.values = std::move(values);
  if (a.values.empty()) return a;
  a.mean = mean_of(a.values);
  if (a.values.size() > 1) {
    double s = 0;
    for (double v : a.values) s += (v - a.mean) * (v - a.mean);
    a.std = std::sqrt(s / static_cast<double>(a.values.size() - 1));
  }
  return a;
}

struct BenchmarkRow {
  std::string label;
  std::vector<std::pair<std::string, Aggregate>> metrics;  // ordered by metric name list
};

struct BenchmarkTable {
  DatasetTask task = DatasetTask::position;
  std::size_t n_seeds = 0;
  std::vector<BenchmarkRow> rows;
};

// Published real-data numbers, attached for context only.
inline nlohmann::ordered_json reference_results(DatasetTask task) {
  nlohmann::ordered_json ref;
  auto row = [](double m, double s) { return nlohmann::ordered_json{{"mean", m}, {"std", s}}; };
  if (task == DatasetTask::direction) {
    ref["CNN"] = {{"rmse_angle_rad", row(0.1947, 0.021)}, {"rmse_amplitude_px", row(57.4486, 2.053)}};
    ref["CNN + SE"] = {{"rmse_angle_rad", row(0.1754, 0.007)}, {"rmse_amplitude_px", row(55.1656, 3.513)}};
    ref["CNN + SA"] = {{"rmse_angle_rad", row(0.1786, 0.010)}, {"rmse_amplitude_px", row(52.1583, 1.943)}};
    ref["CNN + both"] = {{"rmse_angle_rad", row(0.1707, 0.011)}, {"rmse_amplitude_px", row(52.2782, 1.169)}};
  } else {
    ref["CNN"] = {{"mean_euclidean_px", row(115.0143, 0.648)}, {"mean_visual_angle_deg", row(2.39, 0.010)}};
    ref["CNN + SE"] = {{"mean_euclidean_px", row(109.5816, 0.238)}, {"mean_visual_angle_deg", row(2.27, 0.004)}};
    ref["CNN + SA"] = {{"mean_euclidean_px", row(112.3823, 0.851)}, {"mean_visual_angle_deg", row(2.33, 0.013)}};
    ref["CNN + both"] = {{"mean_euclidean_px", row(110.0523, 0.670)}, {"mean_visual_angle_deg", row(2.28, 0.010)}};
  }
  return ref;
}

using BenchmarkProgress = std::function<void(const std::string& variant, TaskKind task, std::size_t seed,
                                             const RunMetrics& metrics)>;

template <typename T>
BenchmarkTable run_benchmark(const BenchmarkConfig& cfg, const BenchmarkProgress& progress = nullptr) {
  if (cfg.n_seeds < 1) throw std::invalid_argument("benchmark: n_seeds must be >= 1");
  const std::vector<TaskKind> tasks = cfg.task == DatasetTask::position
                                          ? std::vector<TaskKind>{TaskKind::position}
                                          : std::vector<TaskKind>{TaskKind::angle, TaskKind::amplitude};
  // values[variant][metric] over seeds
  std::vector<std::map<std::string, std::vector<double>>> values(cfg.variants.size());
  for (std::size_t s = 0; s < cfg.n_seeds; ++s) {
    SynthConfig dcfg = cfg.data;
    dcfg.task = cfg.task;
    dcfg.seed = cfg.data.seed + s;
    auto ds = synth_generate(dcfg);
    if (cfg.noisy_fraction > 0) ds = inject_noisy_electrodes(std::move(ds), cfg.noisy_fraction, cfg.noisy_per_sample, dcfg.seed);
    const auto split = split_by_subject(ds, {0.70, 0.15, 0.15}, s);
    for (std::size_t v = 0; v < cfg.variants.size(); ++v) {
      for (TaskKind task : tasks) {
        ModelConfig mcfg = variant_config(cfg.model, cfg.variants[v].use_se, cfg.variants[v].use_sa);
        mcfg.task = task;
        mcfg.n_electrodes = dcfg.n_electrodes;
        mcfg.n_timepoints = dcfg.n_timepoints;
        mcfg.seed = cfg.model.seed + s;
        TrainConfig tcfg = cfg.train;
        tcfg.seed = cfg.train.seed + s;
        auto run = train<T>(mcfg, tcfg, split.train, split.val);
        auto model = model_from_checkpoint<T>(run.best);
        const auto report = evaluate(model, split.test, tcfg.px_per_degree);
        run.metrics.test = report;
        if (report.mean_euclidean_px) values[v]["mean_euclidean_px"].push_back(*report.mean_euclidean_px);
        if (report.mean_visual_angle_deg) values[v]["mean_visual_angle_deg"].push_back(*report.mean_visual_angle_deg);
        if (report.rmse_angle_rad) values[v]["rmse_angle_rad"].push_back(*report.rmse_angle_rad);
        if (report.rmse_amplitude_px) values[v]["rmse_amplitude_px"].push_back(*report.rmse_amplitude_px);
        if (progress) progress(cfg.variants[v].label(), task, s, run.metrics);
      }
    }
  }
  BenchmarkTable table;
  table.task = cfg.task;
  table.n_seeds = cfg.n_seeds;
  const std::vector<std::string> order = cfg.task == DatasetTask::position
                                             ? std::vector<std::string>{"mean_euclidean_px", "mean_visual_angle_deg"}
                                             : std::vector<std::string>{"rmse_angle_rad", "rmse_amplitude_px"};
  for (std::size_t v = 0; v < cfg.variants.size(); ++v) {
    BenchmarkRow row{cfg.variants[v].label(), {}};
    for (const auto& name : order) row.metrics.emplace_back(name, aggregate(values[v][name]));
    table.rows.push_back(std::move(row));
  }
  return table;
}

inline nlohmann::ordered_json to_json(const BenchmarkTable& t) {
  nlohmann::ordered_json j;
  j["task"] = to_string(t.task);
  j["n_seeds"] = t.n_seeds;
  j["std_over"] = "seeds";
  j["rows"] = nlohmann::ordered_json::array();
  for (const auto& row : t.rows) {
    nlohmann::ordered_json r;
    r["model"] = row.label;
    for (const auto& [name, agg] : row.metrics) {
      r[name] = {{"mean", agg.mean}, {"std", agg.std}, {"values", agg.values}};
    }
    j["rows"].push_back(r);
  }
  j["reference_real_data"] = reference_results(t.task);
  return j;
}

inline std::string to_text(const BenchmarkTable& t) {
  std::ostringstream os;
  os << std::fixed;
  os << std::left << std::setw(12) << "Model";
  if (t.rows.empty()) return os.str();
  for (const auto& [name, agg] : t.rows.front().metrics) os << "  " << std::setw(26) << name;
  os << '\n';
  for (const auto& row : t.rows) {
    os << std::setw(12) << row.label;
    for (const auto& [name, agg] : row.metrics) {
      std::ostringstream cell;
      cell << std::fixed << std::setprecision(4) << agg.mean << " +/- " << agg.std;
      os << "  " << std::setw(26) << cell.str();
    }
    os << '\n';
  }
  return os.str();
}

}  // namespace eegatt
