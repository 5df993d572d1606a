// Copyright (C) 2026 The Arvis Authors
// SPDX-License-Identifier: Apache-2.0

// Binary checkpoint: "SAR1", u32 version, length-prefixed config record,
// u32 tensor count, then per tensor a length-prefixed name, u32 rows, u32
// cols and little-endian f32 values, in canonical declaration order.

#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "arvis/error.hpp"
#include "arvis/transformer.hpp"

namespace arvis {

inline constexpr char kCheckpointMagic[4] = {'S', 'A', 'R', '1'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace ckpt_detail {

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
inline void put_f32(std::string& out, float f) { put_u32(out, std::bit_cast<std::uint32_t>(f)); }
inline void put_i32(std::string& out, std::int32_t v) { put_u32(out, static_cast<std::uint32_t>(v)); }

class Reader {
 public:
  explicit Reader(const std::string& data) : data_(data) {}
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) {
      v |= static_cast<std::uint32_t>(static_cast<unsigned char>(data_[pos_ + static_cast<std::size_t>(i)])) << (8 * i);
    }
    pos_ += 4;
    return v;
  }
  std::int32_t i32() { return static_cast<std::int32_t>(u32()); }
  float f32() { return std::bit_cast<float>(u32()); }
  std::string bytes(std::size_t n) {
    need(n);
    std::string s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == data_.size(); }

 private:
  void need(std::size_t n) const {
    if (data_.size() - pos_ < n) throw CheckpointTruncatedError("checkpoint ends early");
  }
  const std::string& data_;
  std::size_t pos_ = 0;
};

inline std::string encode_config(const ModelConfig& c) {
  std::string s;
  put_i32(s, c.n_layers);
  put_i32(s, c.n_heads);
  put_i32(s, c.model_dim);
  put_i32(s, c.ffn_dim);
  put_i32(s, c.total_vocab);
  put_i32(s, c.max_seq_len);
  put_i32(s, static_cast<std::int32_t>(c.rope_mode));
  put_f32(s, c.rope_base);
  put_i32(s, c.image_codebook);
  return s;
}

inline ModelConfig decode_config(const std::string& rec) {
  Reader r(rec);
  ModelConfig c;
  c.n_layers = r.i32();
  c.n_heads = r.i32();
  c.model_dim = r.i32();
  c.ffn_dim = r.i32();
  c.total_vocab = r.i32();
  c.max_seq_len = r.i32();
  const auto mode = r.i32();
  if (mode != 1 && mode != 2) throw CheckpointConsistencyError("unknown rope mode in config");
  c.rope_mode = static_cast<RopeMode>(mode);
  c.rope_base = r.f32();
  c.image_codebook = r.i32();
  if (!r.done()) throw CheckpointConsistencyError("config record has trailing bytes");
  try {
    c.validate();
  } catch (const ConfigError& e) {
    throw CheckpointConsistencyError(std::string("invalid config: ") + e.what());
  }
  return c;
}

}  // namespace ckpt_detail

inline std::string serialize_checkpoint(const Model<float>& m) {
  using namespace ckpt_detail;
  std::string out(kCheckpointMagic, 4);
  put_u32(out, kCheckpointVersion);
  const std::string cfg = encode_config(m.config);
  put_u32(out, static_cast<std::uint32_t>(cfg.size()));
  out += cfg;
  std::uint32_t count = 0;
  for_each_tensor(m.params, [&](const std::string&, const Tensor2D<float>&) { ++count; });
  put_u32(out, count);
  for_each_tensor(m.params, [&](const std::string& name, const Tensor2D<float>& t) {
    put_u32(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    put_u32(out, static_cast<std::uint32_t>(t.rows()));
    put_u32(out, static_cast<std::uint32_t>(t.cols()));
    for (float x : t.values()) put_f32(out, x);
  });
  return out;
}

// Nothing is returned unless the whole file validates.
inline Model<float> deserialize_checkpoint(const std::string& data) {
  using namespace ckpt_detail;
  if (data.size() < 4 || std::memcmp(data.data(), kCheckpointMagic, 4) != 0) {
    throw CheckpointMagicError("not a checkpoint (bad magic)");
  }
  Reader r(data);
  r.bytes(4);
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) {
    throw CheckpointVersionError("unsupported checkpoint version " + std::to_string(version));
  }
  const std::uint32_t cfg_len = r.u32();
  const ModelConfig cfg = decode_config(r.bytes(cfg_len));
  Model<float> m{cfg, zero_parameters<float>(cfg)};
  std::uint32_t expected = 0;
  for_each_tensor(m.params, [&](const std::string&, const Tensor2D<float>&) { ++expected; });
  const std::uint32_t count = r.u32();
  if (count != expected) {
    throw CheckpointConsistencyError("tensor count " + std::to_string(count) +
                                     " does not match the config (" +
                                     std::to_string(expected) + ")");
  }
  for_each_tensor(m.params, [&](const std::string& name, Tensor2D<float>& t) {
    const std::string got = r.bytes(r.u32());
    if (got != name) {
      throw CheckpointConsistencyError("expected tensor " + name + ", found " + got);
    }
    const std::uint32_t rows = r.u32(), cols = r.u32();
    if (rows != t.rows() || cols != t.cols()) {
      throw CheckpointConsistencyError("tensor " + name + " has shape " +
                                       std::to_string(rows) + "x" + std::to_string(cols) +
                                       ", config implies " + std::to_string(t.rows()) +
                                       "x" + std::to_string(t.cols()));
    }
    for (float& x : t.values()) x = r.f32();
  });
  if (!r.done()) throw CheckpointConsistencyError("trailing bytes after tensors");
  return m;
}

// Writes to a temporary sibling, then renames over the target.
inline void write_file_atomic(const std::filesystem::path& path, const std::string& data) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot write " + tmp.string());
    os.write(data.data(), static_cast<std::streamsize>(data.size()));
    if (!os) throw IoError("short write to " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot read " + path.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

inline void save_checkpoint(const Model<float>& m, const std::filesystem::path& path) {
  write_file_atomic(path, serialize_checkpoint(m));
}

inline Model<float> load_checkpoint(const std::filesystem::path& path) {
  return deserialize_checkpoint(read_file(path));
}

}  // namespace arvis
