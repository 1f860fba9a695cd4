// Copyright 2026 The DCD Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

// Binary checkpoint layout (all integers little-endian):
//
//   "DCDC" | u32 version
//   u32 n_meta   { u32 len, key bytes, u32 len, value bytes } * n_meta
//   u32 n_tensor { u32 len, name bytes, u8 dtype, u32 rank, u64 dim * rank, payload } * n_tensor
//
// dtype 0 is float64, 1 is float32. Payloads are packed little-endian IEEE-754.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "dcd/data.hpp"
#include "dcd/error.hpp"
#include "dcd/tensor.hpp"

namespace dcd {

inline constexpr std::uint32_t kCheckpointVersion = 1;

enum class DType : std::uint8_t { f64 = 0, f32 = 1 };

struct NamedTensor {
  std::string name;
  DType dtype = DType::f64;
  Tensor value;

  friend bool operator==(const NamedTensor&, const NamedTensor&) = default;
};

struct Checkpoint {
  std::uint32_t version = kCheckpointVersion;
  std::vector<NamedTensor> tensors;
  std::map<std::string, std::string> metadata;

  bool has(const std::string& name) const {
    for (const auto& t : tensors)
      if (t.name == name) return true;
    return false;
  }

  const Tensor& tensor(const std::string& name) const {
    for (const auto& t : tensors)
      if (t.name == name) return t.value;
    throw FormatError("checkpoint has no tensor '" + name + "'", 0);
  }

  void put(const std::string& name, const Tensor& value, DType dtype = DType::f64) {
    for (auto& t : tensors)
      if (t.name == name) {
        t.value = value;
        t.dtype = dtype;
        return;
      }
    tensors.push_back({name, dtype, value});
  }

  const std::string& meta(const std::string& key) const {
    auto it = metadata.find(key);
    if (it == metadata.end()) throw FormatError("checkpoint has no metadata key '" + key + "'", 0);
    return it->second;
  }

  friend bool operator==(const Checkpoint&, const Checkpoint&) = default;
};

namespace detail {

class Writer {
 public:
  void u8(std::uint8_t v) { out_.push_back(v); }
  void u32(std::uint32_t v) { le(v); }
  void u64(std::uint64_t v) { le(v); }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    out_.insert(out_.end(), s.begin(), s.end());
  }
  void raw(const char* p, std::size_t n) { out_.insert(out_.end(), p, p + n); }
  Bytes take() { return std::move(out_); }

  template <typename T>
  void le(T v) {
    for (std::size_t i = 0; i < sizeof(T); ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }

 private:
  Bytes out_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> b) : b_(b) {}
  std::size_t offset() const { return off_; }

  void need(std::size_t n, const char* what) {
    if (b_.size() - off_ < n) throw FormatError(std::string("checkpoint truncated while reading ") + what, off_);
  }
  std::uint8_t u8(const char* what) {
    need(1, what);
    return b_[off_++];
  }
  template <typename T>
  T le(const char* what) {
    need(sizeof(T), what);
    T v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(b_[off_ + i]) << (8 * i);
    off_ += sizeof(T);
    return v;
  }
  std::string str(const char* what) {
    const std::uint32_t n = le<std::uint32_t>(what);
    need(n, what);
    std::string s(reinterpret_cast<const char*>(b_.data() + off_), n);
    off_ += n;
    return s;
  }

 private:
  std::span<const std::uint8_t> b_;
  std::size_t off_ = 0;
};

}  // namespace detail

inline Bytes encode_checkpoint(const Checkpoint& c) {
  detail::Writer w;
  w.raw("DCDC", 4);
  w.u32(c.version);
  w.u32(static_cast<std::uint32_t>(c.metadata.size()));
  for (const auto& [k, v] : c.metadata) {
    w.str(k);
    w.str(v);
  }
  w.u32(static_cast<std::uint32_t>(c.tensors.size()));
  for (const auto& t : c.tensors) {
    w.str(t.name);
    w.u8(static_cast<std::uint8_t>(t.dtype));
    w.u32(static_cast<std::uint32_t>(t.value.rank()));
    for (std::size_t d : t.value.shape()) w.u64(d);
    for (double v : t.value.data()) {
      if (t.dtype == DType::f64) w.u64(std::bit_cast<std::uint64_t>(v));
      else w.u32(std::bit_cast<std::uint32_t>(static_cast<float>(v)));
    }
  }
  return w.take();
}

inline Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes) {
  detail::Reader r(bytes);
  r.need(4, "magic");
  if (std::memcmp(bytes.data(), "DCDC", 4) != 0) throw FormatError("bad checkpoint magic", 0);
  for (int i = 0; i < 4; ++i) r.u8("magic");
  Checkpoint c;
  c.version = r.le<std::uint32_t>("version");
  if (c.version != kCheckpointVersion)
    throw FormatError("unsupported checkpoint version " + std::to_string(c.version), 4);
  const std::uint32_t n_meta = r.le<std::uint32_t>("metadata count");
  for (std::uint32_t i = 0; i < n_meta; ++i) {
    std::string k = r.str("metadata key");
    c.metadata[k] = r.str("metadata value");
  }
  const std::uint32_t n_tensors = r.le<std::uint32_t>("tensor count");
  for (std::uint32_t i = 0; i < n_tensors; ++i) {
    NamedTensor t;
    t.name = r.str("tensor name");
    const std::size_t dtype_off = r.offset();
    const std::uint8_t dt = r.u8("dtype");
    if (dt > 1) throw FormatError("unknown dtype tag " + std::to_string(dt), dtype_off);
    t.dtype = static_cast<DType>(dt);
    const std::uint32_t rank = r.le<std::uint32_t>("rank");
    if (rank > 8) throw FormatError("implausible tensor rank " + std::to_string(rank), r.offset() - 4);
    Shape shape(rank);
    std::size_t count = 1;
    for (auto& d : shape) {
      d = r.le<std::uint64_t>("dims");
      if (d != 0 && count > bytes.size() / d) throw FormatError("checkpoint truncated while reading tensor payload", r.offset());
      count *= d;
    }
    const std::size_t width = t.dtype == DType::f64 ? 8 : 4;
    r.need(count * width, "tensor payload");
    std::vector<double> data(count);
    for (auto& v : data)
      v = t.dtype == DType::f64 ? std::bit_cast<double>(r.le<std::uint64_t>("payload"))
                                : static_cast<double>(std::bit_cast<float>(r.le<std::uint32_t>("payload")));
    t.value = Tensor(std::move(shape), std::move(data));
    c.tensors.push_back(std::move(t));
  }
  if (r.offset() != bytes.size()) throw FormatError("trailing bytes after checkpoint", r.offset());
  return c;
}

/// Writes to a sibling temporary file and renames it into place.
inline void save_checkpoint(const Checkpoint& c, const std::filesystem::path& path) {
  const Bytes bytes = encode_checkpoint(c);
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + tmp.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) { return decode_checkpoint(read_file(path)); }

}  // namespace dcd
