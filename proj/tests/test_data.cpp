#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <numeric>
#include <set>

#include "eegatt/data.hpp"

using namespace eegatt;

namespace {

SynthConfig small(DatasetTask task = DatasetTask::position) {
  SynthConfig c;
  c.task = task;
  c.n_subjects = 4;
  c.samples_per_subject = 6;
  c.n_electrodes = 16;
  c.n_timepoints = 32;
  c.seed = 3;
  return c;
}

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / ("eegatt_data_" + name)).string();
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

}  // namespace

// ---------------------------------------------------------------------------
// Layout

TEST(Layout, DefaultIsMirrorSymmetric) {
  for (std::size_t j : {4, 16, 17, 128}) {
    auto l = default_layout(j);
    ASSERT_EQ(l.size(), j);
    for (const auto& e : l.electrodes) {
      bool mirrored = false;
      for (const auto& f : l.electrodes) mirrored = mirrored || (std::abs(f.x + e.x) < 1e-12 && std::abs(f.y - e.y) < 1e-12);
      EXPECT_TRUE(mirrored) << e.name;
    }
  }
}

TEST(Layout, Default128UniqueInsideDisk) {
  auto l = default_layout(128);
  l.validate();
  std::set<std::pair<double, double>> pos;
  for (const auto& e : l.electrodes) {
    pos.insert({e.x, e.y});
    EXPECT_LE(std::hypot(e.x, e.y), 1.0);
  }
  EXPECT_EQ(pos.size(), 128u);
}

TEST(Layout, CsvRoundTripIsExact) {
  auto l = default_layout(17);
  auto back = layout_from_csv(layout_to_csv(l));
  ASSERT_EQ(back.size(), l.size());
  for (std::size_t i = 0; i < l.size(); ++i) {
    EXPECT_EQ(back[i].name, l[i].name);
    EXPECT_EQ(back[i].x, l[i].x);
    EXPECT_EQ(back[i].y, l[i].y);
  }
}

TEST(Layout, CsvErrors) {
  EXPECT_THROW(layout_from_csv(""), std::invalid_argument);
  EXPECT_THROW(layout_from_csv("a,b\n"), std::invalid_argument);
  EXPECT_THROW(layout_from_csv("index,name,x,y\n0,A,2.0,0\n"), std::invalid_argument);
  EXPECT_THROW(layout_from_csv("index,name,x,y\n0,A,0,0\n0,B,0.1,0\n"), std::invalid_argument);
}

// ---------------------------------------------------------------------------
// Synthetic generator

TEST(Synth, SameSeedIsBitwiseIdentical) {
  auto a = encode_dataset(synth_generate(small())).buffer();
  auto b = encode_dataset(synth_generate(small())).buffer();
  EXPECT_EQ(a, b);
  auto c = small();
  c.seed = 4;
  EXPECT_NE(encode_dataset(synth_generate(c)).buffer(), a);
}

TEST(Synth, CenterFixationIsPureNoise) {
  auto layout = default_layout(16);
  auto eye = fixation_offset({400, 300}, 32, 800, 600);
  for (double h : eye.h) EXPECT_EQ(h, 0.0);
  for (double v : eye.v) EXPECT_EQ(v, 0.0);
  Rng rng(1);
  auto sig = synth_signal(layout, eye, 1.0, 0.0, rng);
  for (float v : sig) EXPECT_EQ(v, 0.0f);
}

TEST(Synth, LeftRightFixationsOppositeFrontalSigns) {
  auto layout = default_layout(16);
  // Frontal electrodes on the left and right of the midline.
  std::size_t left = 0, right = 0;
  double best = -1;
  for (std::size_t e = 0; e < layout.size(); ++e) {
    if (layout[e].x > 0.2 && layout[e].y > best) {
      best = layout[e].y;
      right = e;
    }
  }
  for (std::size_t e = 0; e < layout.size(); ++e) {
    if (std::abs(layout[e].x + layout[right].x) < 1e-12 && std::abs(layout[e].y - layout[right].y) < 1e-12) left = e;
  }
  auto mean_of_electrode = [&](PositionLabel p, std::size_t e) {
    Rng rng(2);
    auto sig = synth_signal(layout, fixation_offset(p, 32, 800, 600), 1.0, 0.0, rng);
    double s = 0;
    for (std::size_t t = 0; t < 32; ++t) s += sig[e * 32 + t];
    return s / 32;
  };
  for (PositionLabel p : {PositionLabel{0, 300}, PositionLabel{800, 300}}) {
    const double l = mean_of_electrode(p, left), r = mean_of_electrode(p, right);
    EXPECT_LT(l * r, 0.0);
  }
  EXPECT_GT(mean_of_electrode({800, 300}, right), 0.0);
}

TEST(Synth, LabelsInRange) {
  auto ds = synth_generate(small());
  EXPECT_EQ(ds.size(), 24u);
  EXPECT_EQ(ds.subjects().size(), 4u);
  for (const auto& s : ds.samples) {
    const auto& p = std::get<PositionLabel>(s.label);
    EXPECT_GE(p.x, 0);
    EXPECT_LE(p.x, 800);
    EXPECT_GE(p.y, 0);
    EXPECT_LE(p.y, 600);
    EXPECT_TRUE(s.noisy_electrodes.empty());
  }
  auto dir = synth_generate(small(DatasetTask::direction));
  for (const auto& s : dir.samples) {
    const auto& d = std::get<DirectionLabel>(s.label);
    EXPECT_GT(d.amplitude, 0);
    EXPECT_LE(std::abs(d.angle), std::numbers::pi);
  }
}

TEST(Synth, RejectsBadConfigs) {
  auto c = small();
  c.n_electrodes = 2;
  EXPECT_THROW(synth_generate(c), std::invalid_argument);
  c = small();
  c.noise_std = -1;
  EXPECT_THROW(synth_generate(c), std::invalid_argument);
}

// ---------------------------------------------------------------------------
// Noisy electrodes

TEST(Noisy, ZeroFractionIsIdentity) {
  auto ds = synth_generate(small());
  auto out = inject_noisy_electrodes(ds, 0.0, 2, 9);
  EXPECT_EQ(encode_dataset(out).buffer(), encode_dataset(ds).buffer());
}

TEST(Noisy, InjectedElectrodesExceedHundredMicrovolts) {
  auto ds = synth_generate(small());
  auto out = inject_noisy_electrodes(ds, 0.5, 2, 9);
  std::size_t flagged_samples = 0;
  for (std::size_t i = 0; i < out.size(); ++i) {
    const auto& s = out.samples[i];
    if (s.noisy_electrodes.empty()) {
      EXPECT_EQ(s.signal, ds.samples[i].signal);
      continue;
    }
    ++flagged_samples;
    EXPECT_EQ(s.noisy_electrodes.size(), 2u);
    for (auto e : s.noisy_electrodes) {
      double peak = 0;
      for (std::size_t t = 0; t < 32; ++t) peak = std::max(peak, std::abs(double(s.signal[e * 32 + t])));
      EXPECT_GT(peak, 100.0);
    }
    // Annotation matches exactly the overwritten electrodes.
    std::set<std::uint16_t> changed;
    for (std::uint16_t e = 0; e < 16; ++e) {
      for (std::size_t t = 0; t < 32; ++t) {
        if (s.signal[e * 32 + t] != ds.samples[i].signal[e * 32 + t]) changed.insert(e);
      }
    }
    EXPECT_EQ(std::vector<std::uint16_t>(changed.begin(), changed.end()), s.noisy_electrodes);
    EXPECT_EQ(flag_abnormal_electrodes(s, 32), s.noisy_electrodes);
  }
  EXPECT_EQ(flagged_samples, 12u);
}

TEST(Noisy, RejectsBadArguments) {
  auto ds = synth_generate(small());
  EXPECT_THROW(inject_noisy_electrodes(ds, 1.5, 2, 1), std::invalid_argument);
  EXPECT_THROW(inject_noisy_electrodes(ds, 0.5, 16, 1), std::invalid_argument);
}

// ---------------------------------------------------------------------------
// Splitting

TEST(Split, SeventyTwoSubjects) {
  std::vector<std::uint32_t> s(72);
  std::iota(s.begin(), s.end(), 0u);
  auto p = partition_subjects(s, {0.70, 0.15, 0.15}, 5);
  EXPECT_EQ(p.train.size(), 50u);
  EXPECT_EQ(p.val.size(), 11u);
  EXPECT_EQ(p.test.size(), 11u);
}

TEST(Split, ThreeSubjectsOneEach) {
  auto p = partition_subjects({7, 8, 9}, {0.70, 0.15, 0.15}, 0);
  EXPECT_EQ(p.train.size(), 1u);
  EXPECT_EQ(p.val.size(), 1u);
  EXPECT_EQ(p.test.size(), 1u);
  EXPECT_THROW(partition_subjects({1, 2}, {0.7, 0.15, 0.15}, 0), std::invalid_argument);
}

TEST(Split, LargestRemainderOracle) {
  // Independent restatement of the rounding rule for n in [3, 200].
  for (std::size_t n = 10; n <= 200; ++n) {
    const double q[3] = {0.70 * n, 0.15 * n, 0.15 * n};
    std::size_t c[3], used = 0;
    for (int i = 0; i < 3; ++i) used += c[i] = static_cast<std::size_t>(std::floor(q[i] + 1e-9));
    std::vector<int> by_rem{0, 1, 2};
    std::stable_sort(by_rem.begin(), by_rem.end(),
                     [&](int a, int b) { return q[a] - std::floor(q[a] + 1e-9) > q[b] - std::floor(q[b] + 1e-9) + 1e-12; });
    for (std::size_t k = 0; used < n; ++k, ++used) ++c[by_rem[k]];
    std::vector<std::uint32_t> s(n);
    std::iota(s.begin(), s.end(), 0u);
    auto p = partition_subjects(s, {0.70, 0.15, 0.15}, 1);
    EXPECT_EQ(p.train.size(), c[0]) << n;
    EXPECT_EQ(p.val.size(), c[1]) << n;
    EXPECT_EQ(p.test.size(), c[2]) << n;
  }
}

TEST(Split, DisjointForManySeeds) {
  auto cfg = small();
  cfg.n_subjects = 12;
  cfg.samples_per_subject = 2;
  auto ds = synth_generate(cfg);
  for (std::uint64_t seed = 0; seed < 1000; ++seed) {
    auto sp = split_by_subject(ds, {0.70, 0.15, 0.15}, seed);
    ASSERT_TRUE(subjects_disjoint(sp.train, sp.val));
    ASSERT_TRUE(subjects_disjoint(sp.train, sp.test));
    ASSERT_TRUE(subjects_disjoint(sp.val, sp.test));
    ASSERT_EQ(sp.train.size() + sp.val.size() + sp.test.size(), ds.size());
  }
}

TEST(Split, SeedChangesAssignment) {
  std::vector<std::uint32_t> s(20);
  std::iota(s.begin(), s.end(), 0u);
  EXPECT_NE(partition_subjects(s, {0.7, 0.15, 0.15}, 1).train, partition_subjects(s, {0.7, 0.15, 0.15}, 2).train);
  EXPECT_EQ(partition_subjects(s, {0.7, 0.15, 0.15}, 1).train, partition_subjects(s, {0.7, 0.15, 0.15}, 1).train);
}

// ---------------------------------------------------------------------------
// EEGS container

TEST(Eegs, SaveLoadSaveIsByteIdentical) {
  auto ds = inject_noisy_electrodes(synth_generate(small(DatasetTask::direction)), 0.3, 2, 4);
  const auto a = temp_path("a.eegs"), b = temp_path("b.eegs");
  save_dataset(ds, a);
  auto loaded = load_dataset(a);
  save_dataset(loaded, b);
  EXPECT_EQ(slurp(a), slurp(b));
  EXPECT_EQ(loaded.size(), ds.size());
  EXPECT_EQ(loaded.samples[3].signal, ds.samples[3].signal);
  std::filesystem::remove(a);
  std::filesystem::remove(b);
}

TEST(Eegs, CorruptMagic) {
  auto bytes = encode_dataset(synth_generate(small())).buffer();
  bytes[1] = 'X';
  ByteReader r(bytes);
  try {
    decode_dataset(r);
    FAIL() << "expected BadMagicError";
  } catch (const BadMagicError& e) {
    EXPECT_NE(std::string(e.what()).find("bad magic"), std::string::npos);
  }
}

TEST(Eegs, HeaderPayloadMismatchIsTruncation) {
  auto bytes = encode_dataset(synth_generate(small())).buffer();
  // Header electrode count (u16 at offset 11) inflated beyond the payload.
  bytes[11] = 64;
  ByteReader r(bytes);
  EXPECT_THROW(decode_dataset(r), TruncatedError);
}

TEST(Eegs, UnsupportedVersion) {
  auto bytes = encode_dataset(synth_generate(small())).buffer();
  bytes[4] = 2;
  ByteReader r(bytes);
  EXPECT_THROW(decode_dataset(r), VersionError);
}

TEST(Eegs, ErrorsAreDistinct) {
  EXPECT_FALSE((std::is_base_of_v<BadMagicError, TruncatedError>));
  EXPECT_FALSE((std::is_base_of_v<TruncatedError, VersionError>));
  EXPECT_FALSE((std::is_base_of_v<VersionError, BadMagicError>));
}

TEST(Batches, SignalsAndTargets) {
  auto ds = synth_generate(small());
  std::vector<std::size_t> idx{3, 0};
  auto x = batch_signals<double>(ds, idx);
  EXPECT_EQ(x.shape(), (Shape{2, 16, 32}));
  EXPECT_EQ(x[0], static_cast<double>(ds.samples[3].signal[0]));
  auto y = batch_targets<double>(ds, idx, TaskKind::position);
  EXPECT_EQ(y[2], static_cast<double>(std::get<PositionLabel>(ds.samples[0].label).x));
  EXPECT_THROW(batch_targets<double>(ds, idx, TaskKind::angle), std::invalid_argument);
}
