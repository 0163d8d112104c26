#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <string>
#include <vector>

#include "tagv/binio.hpp"
#include "tagv/config.hpp"
#include "tagv/error.hpp"
#include "tagv/optim.hpp"
#include "tagv/spanpred.hpp"

namespace tagv {

// ---------------------------------------------------------------------------
// Checkpoint file, all little-endian:
//   magic "TAGVCKPT", u32 version
//   u32 config snapshot length, canonical config text
//   u32 regular-token count, each token u16 length + bytes (specials implied)
//   u32 tensor count, each: u16 name length + name, u32 rank, u32 dims,
//       f32 values
//   u8 optimizer-state flag; when set, per tensor in the same order:
//       u64 step, f32 m values, f32 v values
// Values are copied bit-for-bit, so save -> load -> save reproduces the file
// exactly.
// ---------------------------------------------------------------------------

inline constexpr char kCheckpointMagic[8] = {'T', 'A', 'G', 'V', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointContent {
  TrainConfig config;
  Vocabulary vocab;
  ParamStore<float> params;
  bool has_opt_state = false;
};

inline void save_checkpoint(const std::filesystem::path& path, const TrainConfig& cfg,
                            const Vocabulary& vocab, const ParamStore<float>& params,
                            bool with_opt_state) {
  ByteWriter w;
  w.put_bytes(kCheckpointMagic, sizeof(kCheckpointMagic));
  w.put_u32(kCheckpointVersion);

  const std::string snapshot = serialize_config(cfg);
  w.put_u32(static_cast<std::uint32_t>(snapshot.size()));
  w.put_string(snapshot);

  const auto regular = vocab.regular_tokens();
  w.put_u32(static_cast<std::uint32_t>(regular.size()));
  for (const auto& tok : regular) {
    w.put_u16(static_cast<std::uint16_t>(tok.size()));
    w.put_string(tok);
  }

  w.put_u32(static_cast<std::uint32_t>(params.names().size()));
  for (const auto& name : params.names()) {
    const auto& e = params.at(name);
    w.put_u16(static_cast<std::uint16_t>(name.size()));
    w.put_string(name);
    w.put_u32(static_cast<std::uint32_t>(e.dims.size()));
    for (std::size_t d : e.dims) w.put_u32(static_cast<std::uint32_t>(d));
    for (float v : e.value) w.put_f32(v);
  }

  w.put_u8(with_opt_state ? 1 : 0);
  if (with_opt_state) {
    for (const auto& name : params.names()) {
      const auto& e = params.at(name);
      if (e.m.size() != e.value.size() || e.v.size() != e.value.size()) {
        throw Error("save_checkpoint: optimizer state missing for '" + name + "'");
      }
      w.put_u64(e.step);
      for (float v : e.m) w.put_f32(v);
      for (float v : e.v) w.put_f32(v);
    }
  }
  write_file_bytes(path, w.bytes());
}

// Load a checkpoint. When `expected` is given, its canonical snapshot must
// match the stored one byte-for-byte, otherwise the checkpoint cannot drive
// the requested architecture and loading fails loudly.
inline CheckpointContent load_checkpoint(const std::filesystem::path& path,
                                         const TrainConfig* expected = nullptr) {
  const std::string bytes = read_file_bytes(path);
  ByteReader r(bytes);
  char magic[8];
  try {
    r.get_bytes(magic, sizeof(magic));
  } catch (const TruncatedError&) {
    throw BadMagicError(path.string() + ": too short to hold a checkpoint header");
  }
  if (std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0) {
    throw BadMagicError(path.string() + ": bad magic, not a checkpoint");
  }
  CheckpointContent out;
  try {
    const std::uint32_t version = r.get_u32();
    if (version != kCheckpointVersion) {
      throw IncompatibleCheckpointError(path.string() + ": checkpoint version " +
                                        std::to_string(version) + ", expected " +
                                        std::to_string(kCheckpointVersion));
    }
    const std::string snapshot = r.get_string(r.get_u32());
    out.config = parse_config_text(snapshot);
    if (expected && serialize_config(*expected) != snapshot) {
      throw IncompatibleCheckpointError(path.string() +
                                        ": config snapshot does not match the requested run");
    }

    const std::uint32_t n_tokens = r.get_u32();
    std::vector<std::string> regular(n_tokens);
    for (auto& tok : regular) tok = r.get_string(r.get_u16());
    out.vocab = Vocabulary::from_regular_tokens(regular);

    const std::uint32_t n_tensors = r.get_u32();
    for (std::uint32_t t = 0; t < n_tensors; ++t) {
      const std::string name = r.get_string(r.get_u16());
      const std::uint32_t rank = r.get_u32();
      if (rank == 0 || rank > 4) {
        throw FormatError(path.string() + ": tensor '" + name + "' has rank " +
                          std::to_string(rank));
      }
      Shape dims(rank);
      for (auto& d : dims) d = r.get_u32();
      std::vector<float> values(shape_size(dims));
      for (auto& v : values) v = r.get_f32();
      out.params.add(name, std::move(dims), std::move(values));
    }

    out.has_opt_state = r.get_u8() != 0;
    if (out.has_opt_state) {
      for (const auto& name : out.params.names()) {
        auto& e = out.params.at(name);
        e.step = r.get_u64();
        e.m.resize(e.value.size());
        for (auto& v : e.m) v = r.get_f32();
        e.v.resize(e.value.size());
        for (auto& v : e.v) v = r.get_f32();
      }
    }
  } catch (const TruncatedError&) {
    throw TruncatedError(path.string() + ": checkpoint is truncated");
  }
  if (r.remaining() != 0) {
    throw FormatError(path.string() + ": trailing bytes after checkpoint payload");
  }
  return out;
}

}  // namespace tagv
