#pragma once

// ACNN checkpoint container:
//   "ACNN" | version u16 | config length u32 | config key=value text |
//   repeated until EOF: name length u16 | name | rank u8 | dims u32... | f64 data

#include <string>
#include <vector>

#include "eegatt/binary_io.hpp"
#include "eegatt/model.hpp"

namespace eegatt {

inline constexpr std::uint16_t kCheckpointVersion = 1;

struct Checkpoint {
  ModelConfig config;
  std::vector<NamedTensor> tensors;
};

template <typename T>
Checkpoint make_checkpoint(const AttentionCnn<T>& model) {
  return {model.config(), model.state()};
}

template <typename T>
AttentionCnn<T> model_from_checkpoint(const Checkpoint& ckpt) {
  AttentionCnn<T> model(ckpt.config);
  model.load_state(ckpt.tensors);
  model.eval();
  return model;
}

inline ByteWriter encode_checkpoint(const Checkpoint& ckpt) {
  ByteWriter w;
  w.bytes("ACNN");
  w.u16(kCheckpointVersion);
  const std::string cfg = ckpt.config.to_kv();
  w.u32(static_cast<std::uint32_t>(cfg.size()));
  w.bytes(cfg);
  for (const auto& t : ckpt.tensors) {
    w.u16(static_cast<std::uint16_t>(t.name.size()));
    w.bytes(t.name);
    w.u8(static_cast<std::uint8_t>(t.shape.size()));
    for (std::size_t d : t.shape) w.u32(static_cast<std::uint32_t>(d));
    for (double v : t.data) w.f64(v);
  }
  return w;
}

inline Checkpoint decode_checkpoint(ByteReader& r) {
  if (r.remaining() < 4 || r.bytes(4) != "ACNN") throw BadMagicError("bad magic: not an ACNN checkpoint");
  const auto version = r.u16();
  if (version != kCheckpointVersion) {
    throw VersionError("checkpoint version " + std::to_string(version) + " is not supported");
  }
  Checkpoint ckpt;
  const auto cfg_len = r.u32();
  ckpt.config = ModelConfig::from_kv(r.bytes(cfg_len));
  while (!r.at_end()) {
    NamedTensor t;
    t.name = r.bytes(r.u16());
    const auto rank = r.u8();
    for (std::uint8_t i = 0; i < rank; ++i) t.shape.push_back(r.u32());
    const std::size_t n = numel(t.shape);
    if (r.remaining() < n * 8) throw TruncatedError("truncated checkpoint tensor '" + t.name + "'");
    t.data.resize(n);
    for (auto& v : t.data) v = r.f64();
    ckpt.tensors.push_back(std::move(t));
  }
  return ckpt;
}

inline void save_checkpoint(const Checkpoint& ckpt, const std::string& path) { encode_checkpoint(ckpt).write_file(path); }

inline Checkpoint load_checkpoint(const std::string& path) {
  auto r = ByteReader::from_file(path);
  return decode_checkpoint(r);
}

}  // namespace eegatt
