#pragma once

// EEG gaze datasets: electrode layouts, a synthetic forward model for
// fixation/saccade recordings, noisy-electrode injection, subject-disjoint
// splits and the EEGS container format.
//
// The synthetic forward model projects horizontal/vertical eye offsets onto
// the scalp with frontal electrodes weighted most, which is enough structure
// for the models and explanations to be exercised end to end.

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <numbers>
#include <set>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include "eegatt/binary_io.hpp"
#include "eegatt/losses.hpp"
#include "eegatt/random.hpp"
#include "eegatt/tensor.hpp"

namespace eegatt {

// ---------------------------------------------------------------------------
// Electrode layout

struct Electrode {
  std::size_t index = 0;
  std::string name;
  double x = 0;  // unit-disk scalp projection, nose at +y
  double y = 0;
};

struct ElectrodeLayout {
  std::vector<Electrode> electrodes;

  std::size_t size() const { return electrodes.size(); }
  const Electrode& operator[](std::size_t i) const { return electrodes[i]; }

  void validate() const {
    std::set<std::size_t> seen;
    for (const auto& e : electrodes) {
      if (!seen.insert(e.index).second) throw std::invalid_argument("layout: duplicate electrode index " + std::to_string(e.index));
      if (std::hypot(e.x, e.y) > 1.0 + 1e-12) {
        throw std::invalid_argument("layout: electrode " + e.name + " lies outside the unit disk");
      }
    }
    for (std::size_t i = 0; i < electrodes.size(); ++i) {
      if (!seen.count(i)) throw std::invalid_argument("layout: indices must cover 0..J-1");
    }
  }
};

// Concentric rings, mirror-symmetric about the y axis, denser toward the
// front. Odd J puts one electrode at the vertex.
inline ElectrodeLayout default_layout(std::size_t n) {
  if (n < 1) throw std::invalid_argument("default_layout: need at least one electrode");
  std::vector<std::pair<double, double>> pos;
  if (n % 2 == 1) pos.emplace_back(0.0, 0.0);
  const std::size_t pairs = n / 2;
  if (pairs > 0) {
    const std::size_t rings = std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(std::sqrt(pairs / 2.0))));
    std::vector<double> radius(rings);
    double rsum = 0;
    for (std::size_t k = 0; k < rings; ++k) rsum += radius[k] = 0.95 * static_cast<double>(k + 1) / rings;
    std::vector<std::size_t> per_ring(rings);
    std::size_t assigned = 0;
    for (std::size_t k = 0; k + 1 < rings; ++k) {
      per_ring[k] = std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(pairs * radius[k] / rsum)));
      per_ring[k] = std::min(per_ring[k], pairs - assigned - (rings - k - 1));
      assigned += per_ring[k];
    }
    per_ring[rings - 1] = pairs - assigned;
    for (std::size_t k = 0; k < rings; ++k) {
      for (std::size_t i = 0; i < per_ring[k]; ++i) {
        // Angle from the nose direction; the power warp packs the front.
        const double u = (static_cast<double>(i) + 0.5) / static_cast<double>(per_ring[k]);
        const double theta = std::numbers::pi * std::pow(u, 1.4);
        const double x = radius[k] * std::sin(theta), y = radius[k] * std::cos(theta);
        pos.emplace_back(x, y);
        pos.emplace_back(-x, y);
      }
    }
  }
  ElectrodeLayout layout;
  for (std::size_t i = 0; i < pos.size(); ++i) {
    layout.electrodes.push_back({i, "E" + std::to_string(i + 1), pos[i].first, pos[i].second});
  }
  return layout;
}

inline std::string layout_to_csv(const ElectrodeLayout& layout) {
  std::ostringstream os;
  os << "index,name,x,y\n" << std::setprecision(17);
  for (const auto& e : layout.electrodes) os << e.index << ',' << e.name << ',' << e.x << ',' << e.y << '\n';
  return os.str();
}

inline ElectrodeLayout layout_from_csv(const std::string& text) {
  std::istringstream is(text);
  std::string line;
  if (!std::getline(is, line)) throw std::invalid_argument("layout csv: empty input");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != "index,name,x,y") throw std::invalid_argument("layout csv: expected header 'index,name,x,y'");
  ElectrodeLayout layout;
  while (std::getline(is, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::array<std::string, 4> f;
    std::istringstream ls(line);
    for (auto& field : f) {
      if (!std::getline(ls, field, ',')) throw std::invalid_argument("layout csv: malformed row '" + line + "'");
    }
    layout.electrodes.push_back({std::stoull(f[0]), f[1], std::strtod(f[2].c_str(), nullptr), std::strtod(f[3].c_str(), nullptr)});
  }
  std::sort(layout.electrodes.begin(), layout.electrodes.end(),
            [](const Electrode& a, const Electrode& b) { return a.index < b.index; });
  layout.validate();
  return layout;
}

inline ElectrodeLayout load_layout(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open layout '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return layout_from_csv(ss.str());
}

inline void save_layout(const ElectrodeLayout& layout, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write layout '" + path + "'");
  out << layout_to_csv(layout);
}

// ---------------------------------------------------------------------------
// Samples and datasets

enum class DatasetTask : std::uint8_t { position = 0, direction = 1 };

inline std::string to_string(DatasetTask t) { return t == DatasetTask::position ? "position" : "direction"; }

inline DatasetTask dataset_task_from_string(const std::string& s) {
  if (s == "position") return DatasetTask::position;
  if (s == "direction") return DatasetTask::direction;
  throw std::invalid_argument("unknown dataset task '" + s + "'");
}

// Which dataset holds the labels a model task needs.
inline DatasetTask dataset_task_for(TaskKind t) {
  return t == TaskKind::position ? DatasetTask::position : DatasetTask::direction;
}

struct PositionLabel {
  float x = 0;  // px
  float y = 0;
};

struct DirectionLabel {
  float amplitude = 0;  // px
  float angle = 0;      // radians in [-pi, pi]
};

using GazeLabel = std::variant<PositionLabel, DirectionLabel>;

struct EegSample {
  std::uint32_t subject_id = 0;
  std::vector<float> signal;  // [J, T] microvolts, electrode-major
  GazeLabel label;
  std::vector<std::uint16_t> noisy_electrodes;  // sorted, synthetic ground truth
};

struct EegDataset {
  DatasetTask task = DatasetTask::position;
  std::size_t n_electrodes = 0;
  std::size_t n_timepoints = 0;
  std::uint32_t sample_rate_hz = 500;
  std::uint16_t screen_w = 800;
  std::uint16_t screen_h = 600;
  ElectrodeLayout layout;
  std::vector<EegSample> samples;

  std::size_t size() const { return samples.size(); }

  std::set<std::uint32_t> subjects() const {
    std::set<std::uint32_t> s;
    for (const auto& x : samples) s.insert(x.subject_id);
    return s;
  }

  // Subset sharing this dataset's header.
  EegDataset subset(const std::vector<std::size_t>& indices) const {
    EegDataset out = header_copy();
    for (std::size_t i : indices) out.samples.push_back(samples.at(i));
    return out;
  }

  EegDataset header_copy() const {
    EegDataset out;
    out.task = task;
    out.n_electrodes = n_electrodes;
    out.n_timepoints = n_timepoints;
    out.sample_rate_hz = sample_rate_hz;
    out.screen_w = screen_w;
    out.screen_h = screen_h;
    out.layout = layout;
    return out;
  }
};

// Model input [B, J, T] for the given sample indices.
template <typename T>
Tensor<T> batch_signals(const EegDataset& ds, std::span<const std::size_t> indices) {
  const std::size_t per = ds.n_electrodes * ds.n_timepoints;
  std::vector<T> data(indices.size() * per);
  for (std::size_t b = 0; b < indices.size(); ++b) {
    const auto& sig = ds.samples.at(indices[b]).signal;
    std::copy(sig.begin(), sig.end(), data.begin() + static_cast<std::ptrdiff_t>(b * per));
  }
  return Tensor<T>({indices.size(), ds.n_electrodes, ds.n_timepoints}, std::move(data));
}

// Regression targets [B, output_dim(task)].
template <typename T>
Tensor<T> batch_targets(const EegDataset& ds, std::span<const std::size_t> indices, TaskKind task) {
  if (dataset_task_for(task) != ds.task) {
    throw std::invalid_argument("task " + to_string(task) + " is incompatible with a " + to_string(ds.task) + " dataset");
  }
  const std::size_t d = output_dim(task);
  std::vector<T> data(indices.size() * d);
  for (std::size_t b = 0; b < indices.size(); ++b) {
    const auto& label = ds.samples.at(indices[b]).label;
    if (task == TaskKind::position) {
      const auto& p = std::get<PositionLabel>(label);
      data[b * 2] = p.x;
      data[b * 2 + 1] = p.y;
    } else {
      const auto& dl = std::get<DirectionLabel>(label);
      data[b] = task == TaskKind::amplitude ? dl.amplitude : dl.angle;
    }
  }
  return Tensor<T>({indices.size(), d}, std::move(data));
}

// ---------------------------------------------------------------------------
// Synthetic forward model

// Scalp potential per unit of normalized eye offset, before subject gain.
inline constexpr double kOcularGainUv = 15.0;

inline double frontality(const Electrode& e) { return std::max(0.0, e.y) + 0.1; }

struct SynthConfig {
  DatasetTask task = DatasetTask::position;
  std::size_t n_subjects = 10;
  std::size_t samples_per_subject = 200;
  std::size_t n_electrodes = 128;
  std::size_t n_timepoints = 500;
  double noise_std = 10.0;  // microvolts
  std::uint64_t seed = 0;
  std::uint32_t sample_rate_hz = 500;
  std::uint16_t screen_w = 800;
  std::uint16_t screen_h = 600;
};

// Normalized eye-offset waveforms: horizontal h(t) and vertical v(t), with
// +v meaning up on screen.
struct EyeOffset {
  std::vector<double> h;
  std::vector<double> v;
};

inline EyeOffset fixation_offset(PositionLabel p, std::size_t n_t, double screen_w, double screen_h) {
  const double h = (p.x - screen_w / 2) / (screen_w / 2);
  const double v = (screen_h / 2 - p.y) / (screen_h / 2);
  return {std::vector<double>(n_t, h), std::vector<double>(n_t, v)};
}

inline EyeOffset saccade_offset(DirectionLabel d, std::size_t step_at, std::size_t n_t, double screen_w, double screen_h) {
  EyeOffset off{std::vector<double>(n_t, 0.0), std::vector<double>(n_t, 0.0)};
  const double dh = d.amplitude * std::cos(d.angle) / (screen_w / 2);
  const double dv = -d.amplitude * std::sin(d.angle) / (screen_h / 2);
  for (std::size_t t = step_at; t < n_t; ++t) {
    off.h[t] = dh;
    off.v[t] = dv;
  }
  return off;
}

// signal_e(t) = gain * A * (g_h(e) h(t) + g_v(e) v(t)) + noise.
inline std::vector<float> synth_signal(const ElectrodeLayout& layout, const EyeOffset& eye, double subject_gain,
                                       double noise_std, Rng& rng) {
  const std::size_t n_t = eye.h.size();
  std::vector<float> sig(layout.size() * n_t);
  for (std::size_t e = 0; e < layout.size(); ++e) {
    const double front = frontality(layout[e]);
    const double gh = kOcularGainUv * subject_gain * layout[e].x * front;
    const double gv = kOcularGainUv * subject_gain * layout[e].y * front;
    for (std::size_t t = 0; t < n_t; ++t) {
      const double noise = noise_std > 0 ? noise_std * rng.normal() : 0.0;
      sig[e * n_t + t] = static_cast<float>(gh * eye.h[t] + gv * eye.v[t] + noise);
    }
  }
  return sig;
}

inline double subject_gain(std::uint64_t seed, std::uint32_t subject) {
  Rng rng(stream_seed(seed, {subject, 0x5ab7ec7ULL}));
  return std::exp(0.2 * rng.normal());
}

inline EegDataset synth_generate(const SynthConfig& cfg, const ElectrodeLayout* layout = nullptr) {
  if (cfg.n_electrodes < 4) throw std::invalid_argument("synth_generate: need at least 4 electrodes");
  if (cfg.n_timepoints < 16) throw std::invalid_argument("synth_generate: need at least 16 timepoints");
  if (cfg.n_subjects < 1 || cfg.samples_per_subject < 1) throw std::invalid_argument("synth_generate: empty dataset");
  if (cfg.noise_std < 0) throw std::invalid_argument("synth_generate: noise_std must be non-negative");
  EegDataset ds;
  ds.task = cfg.task;
  ds.n_electrodes = cfg.n_electrodes;
  ds.n_timepoints = cfg.n_timepoints;
  ds.sample_rate_hz = cfg.sample_rate_hz;
  ds.screen_w = cfg.screen_w;
  ds.screen_h = cfg.screen_h;
  ds.layout = layout ? *layout : default_layout(cfg.n_electrodes);
  if (ds.layout.size() != cfg.n_electrodes) throw std::invalid_argument("synth_generate: layout size mismatch");

  for (std::uint32_t s = 0; s < cfg.n_subjects; ++s) {
    const double gain = subject_gain(cfg.seed, s);
    for (std::size_t i = 0; i < cfg.samples_per_subject; ++i) {
      Rng rng(stream_seed(cfg.seed, {s, i}));
      EegSample sample;
      sample.subject_id = s;
      EyeOffset eye;
      if (cfg.task == DatasetTask::position) {
        PositionLabel p{static_cast<float>(rng.uniform(0, cfg.screen_w)), static_cast<float>(rng.uniform(0, cfg.screen_h))};
        eye = fixation_offset(p, cfg.n_timepoints, cfg.screen_w, cfg.screen_h);
        sample.label = p;
      } else {
        DirectionLabel d{static_cast<float>(rng.uniform(10, 600)),
                         static_cast<float>(rng.uniform(-std::numbers::pi, std::numbers::pi))};
        const auto lo = cfg.n_timepoints / 4, hi = (3 * cfg.n_timepoints) / 4;
        const std::size_t step_at = lo + static_cast<std::size_t>(rng.below(hi - lo));
        eye = saccade_offset(d, step_at, cfg.n_timepoints, cfg.screen_w, cfg.screen_h);
        sample.label = d;
      }
      sample.signal = synth_signal(ds.layout, eye, gain, cfg.noise_std, rng);
      ds.samples.push_back(std::move(sample));
    }
  }
  return ds;
}

// Overwrites `n_bad_per_sample` electrodes in a `fraction_samples` share of
// the samples with a random-walk artifact whose peak |amplitude| is 120-200 uV.
inline EegDataset inject_noisy_electrodes(EegDataset ds, double fraction_samples, std::size_t n_bad_per_sample,
                                          std::uint64_t seed) {
  if (!(fraction_samples >= 0.0 && fraction_samples <= 1.0)) {
    throw std::invalid_argument("inject_noisy_electrodes: fraction must lie in [0, 1]");
  }
  if (n_bad_per_sample >= ds.n_electrodes) {
    throw std::invalid_argument("inject_noisy_electrodes: n_bad_per_sample must be < J");
  }
  const auto count = static_cast<std::size_t>(std::llround(fraction_samples * static_cast<double>(ds.size())));
  if (count == 0 || n_bad_per_sample == 0) return ds;
  std::vector<std::size_t> order(ds.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng pick(stream_seed(seed, {1}));
  pick.shuffle(order);
  order.resize(count);
  std::sort(order.begin(), order.end());

  const std::size_t n_t = ds.n_timepoints;
  for (std::size_t idx : order) {
    Rng rng(stream_seed(seed, {2, idx}));
    std::vector<std::uint16_t> electrodes(ds.n_electrodes);
    std::iota(electrodes.begin(), electrodes.end(), std::uint16_t{0});
    // Partial Fisher-Yates: the first n_bad entries are a uniform draw.
    for (std::size_t i = 0; i < n_bad_per_sample; ++i) {
      std::swap(electrodes[i], electrodes[i + rng.below(electrodes.size() - i)]);
    }
    electrodes.resize(n_bad_per_sample);
    auto& sample = ds.samples[idx];
    for (std::uint16_t e : electrodes) {
      std::vector<double> walk(n_t);
      double acc = 0, peak = 0;
      for (std::size_t t = 0; t < n_t; ++t) {
        acc += rng.normal();
        walk[t] = acc;
        peak = std::max(peak, std::abs(acc));
      }
      if (peak == 0) peak = 1;
      const double target = rng.uniform(120.0, 200.0);
      for (std::size_t t = 0; t < n_t; ++t) sample.signal[e * n_t + t] = static_cast<float>(walk[t] * target / peak);
    }
    std::set<std::uint16_t> merged(sample.noisy_electrodes.begin(), sample.noisy_electrodes.end());
    merged.insert(electrodes.begin(), electrodes.end());
    sample.noisy_electrodes.assign(merged.begin(), merged.end());
  }
  return ds;
}

// Heuristic flagger: electrodes whose peak |amplitude| exceeds the threshold.
inline std::vector<std::uint16_t> flag_abnormal_electrodes(const EegSample& s, std::size_t n_timepoints,
                                                           double threshold_uv = 100.0) {
  std::vector<std::uint16_t> out;
  const std::size_t n_e = s.signal.size() / n_timepoints;
  for (std::size_t e = 0; e < n_e; ++e) {
    double peak = 0;
    for (std::size_t t = 0; t < n_timepoints; ++t) peak = std::max(peak, std::abs(double(s.signal[e * n_timepoints + t])));
    if (peak > threshold_uv) out.push_back(static_cast<std::uint16_t>(e));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Subject-disjoint splitting

struct SubjectPartition {
  std::vector<std::uint32_t> train, val, test;
};

// Shuffles subjects by seed and slices by fraction using largest-remainder
// rounding. With at least three subjects every partition gets one.
inline SubjectPartition partition_subjects(std::vector<std::uint32_t> subjects, std::array<double, 3> fractions,
                                           std::uint64_t seed) {
  std::sort(subjects.begin(), subjects.end());
  subjects.erase(std::unique(subjects.begin(), subjects.end()), subjects.end());
  const std::size_t n = subjects.size();
  if (n < 3) throw std::invalid_argument("split_by_subject: need at least 3 subjects, have " + std::to_string(n));
  const double total = fractions[0] + fractions[1] + fractions[2];
  if (!(total > 0) || fractions[0] < 0 || fractions[1] < 0 || fractions[2] < 0) {
    throw std::invalid_argument("split_by_subject: invalid fractions");
  }
  std::array<std::size_t, 3> counts{};
  std::array<double, 3> rem{};
  std::size_t used = 0;
  for (int i = 0; i < 3; ++i) {
    const double q = static_cast<double>(n) * fractions[i] / total;
    counts[i] = static_cast<std::size_t>(std::floor(q + 1e-9));
    rem[i] = q - static_cast<double>(counts[i]);
    used += counts[i];
  }
  while (used < n) {
    int best = 0;
    for (int i = 1; i < 3; ++i) {
      if (rem[i] > rem[best] + 1e-12) best = i;
    }
    ++counts[best];
    rem[best] = -1;
    ++used;
  }
  for (int i = 0; i < 3; ++i) {
    if (counts[i] == 0) {
      auto donor = std::max_element(counts.begin(), counts.end());
      --*donor;
      ++counts[i];
    }
  }
  Rng rng(stream_seed(seed, {0x5b117ULL}));
  rng.shuffle(subjects);
  SubjectPartition p;
  auto it = subjects.begin();
  p.train.assign(it, it + static_cast<std::ptrdiff_t>(counts[0]));
  it += static_cast<std::ptrdiff_t>(counts[0]);
  p.val.assign(it, it + static_cast<std::ptrdiff_t>(counts[1]));
  it += static_cast<std::ptrdiff_t>(counts[1]);
  p.test.assign(it, subjects.end());
  for (auto* v : {&p.train, &p.val, &p.test}) std::sort(v->begin(), v->end());
  return p;
}

struct DatasetSplit {
  EegDataset train, val, test;
};

inline DatasetSplit split_by_subject(const EegDataset& ds, std::array<double, 3> fractions = {0.70, 0.15, 0.15},
                                     std::uint64_t seed = 0) {
  const auto subj = ds.subjects();
  const auto part = partition_subjects({subj.begin(), subj.end()}, fractions, seed);
  std::map<std::uint32_t, int> where;
  for (auto s : part.train) where[s] = 0;
  for (auto s : part.val) where[s] = 1;
  for (auto s : part.test) where[s] = 2;
  DatasetSplit out{ds.header_copy(), ds.header_copy(), ds.header_copy()};
  for (const auto& sample : ds.samples) {
    switch (where.at(sample.subject_id)) {
      case 0: out.train.samples.push_back(sample); break;
      case 1: out.val.samples.push_back(sample); break;
      default: out.test.samples.push_back(sample); break;
    }
  }
  return out;
}

inline bool subjects_disjoint(const EegDataset& a, const EegDataset& b) {
  const auto sa = a.subjects();
  for (auto s : b.subjects()) {
    if (sa.count(s)) return false;
  }
  return true;
}

// ---------------------------------------------------------------------------
// EEGS container

inline constexpr std::uint16_t kDatasetVersion = 1;

inline ByteWriter encode_dataset(const EegDataset& ds) {
  ByteWriter w;
  w.bytes("EEGS");
  w.u16(kDatasetVersion);
  w.u8(static_cast<std::uint8_t>(ds.task));
  w.u32(static_cast<std::uint32_t>(ds.samples.size()));
  w.u16(static_cast<std::uint16_t>(ds.n_electrodes));
  w.u32(static_cast<std::uint32_t>(ds.n_timepoints));
  w.u32(ds.sample_rate_hz);
  w.u16(ds.screen_w);
  w.u16(ds.screen_h);
  for (const auto& s : ds.samples) {
    w.u32(s.subject_id);
    if (ds.task == DatasetTask::position) {
      const auto& p = std::get<PositionLabel>(s.label);
      w.f32(p.x);
      w.f32(p.y);
    } else {
      const auto& d = std::get<DirectionLabel>(s.label);
      w.f32(d.amplitude);
      w.f32(d.angle);
    }
    w.u16(static_cast<std::uint16_t>(s.noisy_electrodes.size()));
    for (auto e : s.noisy_electrodes) w.u16(e);
    if (s.signal.size() != ds.n_electrodes * ds.n_timepoints) throw std::invalid_argument("sample signal size mismatch");
    for (float v : s.signal) w.f32(v);
  }
  return w;
}

inline EegDataset decode_dataset(ByteReader& r) {
  if (r.remaining() < 4 || r.bytes(4) != "EEGS") throw BadMagicError("bad magic: not an EEGS dataset");
  const auto version = r.u16();
  if (version != kDatasetVersion) throw VersionError("dataset version " + std::to_string(version) + " is not supported");
  EegDataset ds;
  const auto task = r.u8();
  if (task > 1) throw FormatError("dataset: unknown task code " + std::to_string(task));
  ds.task = static_cast<DatasetTask>(task);
  const auto n = r.u32();
  ds.n_electrodes = r.u16();
  ds.n_timepoints = r.u32();
  ds.sample_rate_hz = r.u32();
  ds.screen_w = r.u16();
  ds.screen_h = r.u16();
  const std::size_t per = ds.n_electrodes * ds.n_timepoints;
  ds.samples.reserve(std::min<std::size_t>(n, r.remaining() / (per * 4 + 14) + 1));
  for (std::uint32_t i = 0; i < n; ++i) {
    EegSample s;
    s.subject_id = r.u32();
    const float a = r.f32(), b = r.f32();
    if (ds.task == DatasetTask::position) s.label = PositionLabel{a, b};
    else s.label = DirectionLabel{a, b};
    const auto n_noisy = r.u16();
    for (std::uint16_t k = 0; k < n_noisy; ++k) s.noisy_electrodes.push_back(r.u16());
    if (r.remaining() < per * 4) throw TruncatedError("truncated dataset: sample " + std::to_string(i) + " payload is short");
    s.signal.resize(per);
    for (float& v : s.signal) v = r.f32();
    ds.samples.push_back(std::move(s));
  }
  if (!r.at_end()) throw FormatError("dataset: trailing bytes after last sample");
  if (ds.n_electrodes > 0) ds.layout = default_layout(ds.n_electrodes);
  return ds;
}

inline void save_dataset(const EegDataset& ds, const std::string& path) { encode_dataset(ds).write_file(path); }

inline EegDataset load_dataset(const std::string& path) {
  auto r = ByteReader::from_file(path);
  return decode_dataset(r);
}

}  // namespace eegatt
