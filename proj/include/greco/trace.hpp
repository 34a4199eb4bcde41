// Copyright 2026 The greco Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.
// =============================================================================

// Binary formats, all little-endian.
//
// GRT1 gradient trace:
//   "GRT1" u32 version=1 u32 layer_count
//   per layer: u16 name_len, name bytes, u8 ndims, ndims x u64 dims
//   windows until EOF: u64 window_id, u32 step_count, per layer n x f32
//
// GRCK checkpoint:
//   "GRCK" u32 version=1 u64 model_seed u64 data_seed u64 step u32 tensor_count
//   per tensor: u16 name_len, name bytes, u8 ndims, ndims x u64 dims, n x f32

#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "greco/common.hpp"
#include "greco/compressors.hpp"
#include "greco/error_tables.hpp"

namespace greco {

class ByteWriter {
 public:
  void u8(std::uint8_t v) { buf_.push_back(static_cast<char>(v)); }
  void u16(std::uint16_t v) { put(v, 2); }
  void u32(std::uint32_t v) { put(v, 4); }
  void u64(std::uint64_t v) { put(v, 8); }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void bytes(std::string_view s) { buf_.append(s); }

  const std::string& data() const { return buf_; }
  std::string take() { return std::move(buf_); }

 private:
  void put(std::uint64_t v, int n) {
    for (int i = 0; i < n; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  std::string buf_;
};

class ByteReader {
 public:
  ByteReader(std::string_view data, std::string what) : data_(data), what_(std::move(what)) {}

  std::uint8_t u8() { return static_cast<std::uint8_t>(get(1)); }
  std::uint16_t u16() { return static_cast<std::uint16_t>(get(2)); }
  std::uint32_t u32() { return static_cast<std::uint32_t>(get(4)); }
  std::uint64_t u64() { return get(8); }
  float f32() { return std::bit_cast<float>(u32()); }
  std::string_view bytes(std::size_t n) {
    need(n);
    auto s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  std::size_t offset() const { return pos_; }
  bool at_end() const { return pos_ == data_.size(); }
  std::size_t remaining() const { return data_.size() - pos_; }

  [[noreturn]] void fail(const std::string& msg) const {
    throw DataError(what_ + ": " + msg + " at offset " + std::to_string(pos_));
  }

 private:
  void need(std::size_t n) const {
    if (data_.size() - pos_ < n) fail("truncated (need " + std::to_string(n) + " bytes)");
  }
  std::uint64_t get(int n) {
    need(static_cast<std::size_t>(n));
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i)
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(data_[pos_ + static_cast<std::size_t>(i)]))
           << (8 * i);
    pos_ += static_cast<std::size_t>(n);
    return v;
  }

  std::string_view data_;
  std::string what_;
  std::size_t pos_ = 0;
};

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open '" + path + "'");
  return std::string(std::istreambuf_iterator<char>(in), {});
}

inline void write_file(const std::string& path, std::string_view data) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write '" + path + "'");
  out.write(data.data(), static_cast<std::streamsize>(data.size()));
  if (!out) throw DataError("write failed for '" + path + "'");
}

namespace detail {

inline void write_tensor_header(ByteWriter& w, const std::string& name,
                                const std::vector<std::uint64_t>& dims) {
  if (name.size() > 0xffff) throw UsageError("name too long: " + name);
  if (dims.size() > 0xff) throw UsageError("too many dimensions for " + name);
  w.u16(static_cast<std::uint16_t>(name.size()));
  w.bytes(name);
  w.u8(static_cast<std::uint8_t>(dims.size()));
  for (auto d : dims) w.u64(d);
}

inline LayerSpec read_tensor_header(ByteReader& r, std::size_t index) {
  const auto name_len = r.u16();
  std::string name(r.bytes(name_len));
  const auto ndims = r.u8();
  if (ndims == 0) r.fail("tensor '" + name + "' has zero dimensions");
  std::vector<std::uint64_t> dims;
  for (int i = 0; i < ndims; ++i) {
    dims.push_back(r.u64());
    if (dims.back() == 0 || dims.back() > (std::uint64_t{1} << 40))
      r.fail("tensor '" + name + "' has an invalid dimension");
  }
  return make_layer(index, std::move(name), std::move(dims));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// GRT1 traces
// ---------------------------------------------------------------------------

inline constexpr std::uint32_t kTraceVersion = 1;

struct TraceWindow {
  std::uint64_t window_id = 0;
  std::uint32_t step_count = 0;
  std::vector<std::vector<float>> values;  // per layer
};

struct Trace {
  std::vector<LayerSpec> layers;
  std::vector<TraceWindow> windows;

  const TraceWindow& window(std::uint64_t id) const {
    for (const auto& w : windows)
      if (w.window_id == id) return w;
    throw DataError("trace has no window " + std::to_string(id));
  }
};

inline std::string encode_trace_header(const std::vector<LayerSpec>& layers) {
  ByteWriter w;
  w.bytes("GRT1");
  w.u32(kTraceVersion);
  w.u32(static_cast<std::uint32_t>(layers.size()));
  for (const auto& l : layers) detail::write_tensor_header(w, l.name, l.shape);
  return w.take();
}

inline std::string encode_trace_window(const GradientAccumulator& acc) {
  ByteWriter w;
  w.u64(acc.window_id());
  w.u32(acc.step_count());
  for (const auto& s : acc.sums())
    for (float v : s) w.f32(v);
  return w.take();
}

inline Trace decode_trace(std::string_view data) {
  ByteReader r(data, "GRT1 trace");
  if (data.empty()) r.fail("empty file");
  if (r.bytes(std::min<std::size_t>(4, data.size())) != "GRT1") r.fail("bad magic");
  if (const auto v = r.u32(); v != kTraceVersion) r.fail("unsupported version " + std::to_string(v));
  const auto count = r.u32();
  Trace t;
  for (std::uint32_t i = 0; i < count; ++i) t.layers.push_back(detail::read_tensor_header(r, i));
  while (!r.at_end()) {
    TraceWindow w;
    w.window_id = r.u64();
    w.step_count = r.u32();
    for (const auto& l : t.layers) {
      if (r.remaining() / 4 < l.element_count) r.fail("truncated window for layer '" + l.name + "'");
      std::vector<float> vals(l.element_count);
      for (auto& v : vals) v = r.f32();
      w.values.push_back(std::move(vals));
    }
    t.windows.push_back(std::move(w));
  }
  return t;
}

inline Trace read_trace(const std::string& path) { return decode_trace(read_file(path)); }

inline GradientAccumulator accumulator_from_window(const Trace& t, const TraceWindow& w) {
  GradientAccumulator acc(t.layers, w.window_id);
  acc.mutable_sums() = w.values;
  acc.set_step_count(w.step_count);
  return acc;
}

// Appends windows to a trace file; the header is written on construction.
class TraceWriter {
 public:
  TraceWriter(const std::string& path, const std::vector<LayerSpec>& layers)
      : out_(path, std::ios::binary | std::ios::trunc), path_(path) {
    if (!out_) throw DataError("cannot write '" + path + "'");
    put(encode_trace_header(layers));
  }
  void append(const GradientAccumulator& acc) { put(encode_trace_window(acc)); }

 private:
  void put(const std::string& s) {
    out_.write(s.data(), static_cast<std::streamsize>(s.size()));
    out_.flush();
    if (!out_) throw DataError("write failed for '" + path_ + "'");
  }
  std::ofstream out_;
  std::string path_;
};

// ---------------------------------------------------------------------------
// GRCK checkpoints
// ---------------------------------------------------------------------------

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  std::uint64_t model_seed = 0;
  std::uint64_t data_seed = 0;
  std::uint64_t step = 0;
  std::vector<LayerSpec> tensors;
  std::vector<std::vector<float>> values;
};

inline std::string encode_checkpoint(const Checkpoint& ck) {
  ByteWriter w;
  w.bytes("GRCK");
  w.u32(kCheckpointVersion);
  w.u64(ck.model_seed);
  w.u64(ck.data_seed);
  w.u64(ck.step);
  w.u32(static_cast<std::uint32_t>(ck.tensors.size()));
  for (std::size_t i = 0; i < ck.tensors.size(); ++i) {
    detail::write_tensor_header(w, ck.tensors[i].name, ck.tensors[i].shape);
    for (float v : ck.values[i]) w.f32(v);
  }
  return w.take();
}

inline Checkpoint decode_checkpoint(std::string_view data) {
  ByteReader r(data, "GRCK checkpoint");
  if (data.empty()) r.fail("empty file");
  if (r.bytes(std::min<std::size_t>(4, data.size())) != "GRCK") r.fail("bad magic");
  if (const auto v = r.u32(); v != kCheckpointVersion)
    r.fail("unsupported version " + std::to_string(v));
  Checkpoint ck;
  ck.model_seed = r.u64();
  ck.data_seed = r.u64();
  ck.step = r.u64();
  const auto count = r.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    ck.tensors.push_back(detail::read_tensor_header(r, i));
    const auto n = ck.tensors.back().element_count;
    if (r.remaining() / 4 < n) r.fail("truncated tensor '" + ck.tensors.back().name + "'");
    std::vector<float> vals(n);
    for (auto& v : vals) v = r.f32();
    ck.values.push_back(std::move(vals));
  }
  if (!r.at_end()) r.fail("trailing bytes");
  return ck;
}

}  // namespace greco
