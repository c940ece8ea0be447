#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "dccl/errors.hpp"
#include "dccl/model.hpp"
#include "dccl/split.hpp"

namespace dccl {

// All on-disk formats are little-endian and versioned. A model payload is:
//   magic "DCMD" | version u32 | spec digest u64 | param count u32 |
//   per parameter: ndim u32, dims u32 each, values f64 each.
// A decoupled-model file wraps four model payloads (encoder may be empty):
//   magic "DCDM" | version u32 | flags u32 | num_classes u32 | 4 payloads.
inline constexpr uint32_t kFormatVersion = 1;
inline constexpr char kModelMagic[4] = {'D', 'C', 'M', 'D'};
inline constexpr char kDecoupledMagic[4] = {'D', 'C', 'D', 'M'};
inline constexpr char kDatasetMagic[4] = {'D', 'C', 'D', 'S'};

namespace wire {

inline void put_u32(std::vector<uint8_t>& out, uint32_t v) {
  out.push_back(static_cast<uint8_t>(v));
  out.push_back(static_cast<uint8_t>(v >> 8));
  out.push_back(static_cast<uint8_t>(v >> 16));
  out.push_back(static_cast<uint8_t>(v >> 24));
}

inline void put_u64(std::vector<uint8_t>& out, uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<uint8_t>(v >> (8 * i)));
}

inline void put_f64(std::vector<uint8_t>& out, double v) { put_u64(out, std::bit_cast<uint64_t>(v)); }

class Reader {
 public:
  Reader(const uint8_t* data, size_t len) : data_(data), len_(len) {}

  uint32_t u32() {
    need(4);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(data_[pos_ + static_cast<size_t>(i)]) << (8 * i);
    pos_ += 4;
    return v;
  }

  uint64_t u64() {
    need(8);
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(data_[pos_ + static_cast<size_t>(i)]) << (8 * i);
    pos_ += 8;
    return v;
  }

  double f64() { return std::bit_cast<double>(u64()); }

  void magic(const char expect[4]) {
    need(4);
    if (std::memcmp(data_ + pos_, expect, 4) != 0) {
      throw DataFormatError(DataFormatError::Kind::BadMagic,
                            "expected magic '" + std::string(expect, 4) + "'");
    }
    pos_ += 4;
  }

  bool at_end() const { return pos_ == len_; }
  size_t remaining() const { return len_ - pos_; }

 private:
  void need(size_t n) {
    if (pos_ + n > len_) {
      throw DataFormatError(DataFormatError::Kind::Truncated,
                            "need " + std::to_string(n) + " bytes, " + std::to_string(len_ - pos_) + " left");
    }
  }

  const uint8_t* data_;
  size_t len_;
  size_t pos_ = 0;
};

inline std::vector<uint8_t> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return bytes;
}

inline void write_file(const std::string& path, const std::vector<uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("short write to " + path);
}

}  // namespace wire

inline void serialize_model_into(Model& m, std::vector<uint8_t>& out) {
  for (char c : kModelMagic) out.push_back(static_cast<uint8_t>(c));
  wire::put_u32(out, kFormatVersion);
  wire::put_u64(out, m.empty() ? 0 : spec_digest(m.spec()));
  const std::vector<Parameter*> params = m.params();
  wire::put_u32(out, static_cast<uint32_t>(params.size()));
  for (const Parameter* p : params) {
    wire::put_u32(out, static_cast<uint32_t>(p->value.shape.size()));
    for (int d : p->value.shape) wire::put_u32(out, static_cast<uint32_t>(d));
    for (double v : p->value.data) wire::put_f64(out, v);
  }
}

inline std::vector<uint8_t> serialize_model(Model& m) {
  std::vector<uint8_t> out;
  serialize_model_into(m, out);
  return out;
}

// Exact byte size of serialize_model without building the buffer; this is
// what the simulated channel charges for model messages.
inline uint64_t serialized_model_size(Model& m) {
  uint64_t n = 4 + 4 + 8 + 4;
  for (const Parameter* p : m.params()) {
    n += 4 + 4ULL * p->value.shape.size() + 8ULL * static_cast<uint64_t>(p->numel());
  }
  return n;
}

inline void deserialize_model_params(wire::Reader& r, Model& m, bool check_digest = true) {
  r.magic(kModelMagic);
  const uint32_t version = r.u32();
  if (version != kFormatVersion) {
    throw DataFormatError(DataFormatError::Kind::BadVersion, "model payload version " + std::to_string(version));
  }
  const uint64_t digest = r.u64();
  if (check_digest && !m.empty() && digest != spec_digest(m.spec())) {
    throw DataFormatError(DataFormatError::Kind::DigestMismatch, "checkpoint was written for a different spec");
  }
  const uint32_t count = r.u32();
  const std::vector<Parameter*> params = m.params();
  if (count != params.size()) {
    throw DataFormatError(DataFormatError::Kind::BadHeader,
                          "parameter count " + std::to_string(count) + " != " + std::to_string(params.size()));
  }
  for (Parameter* p : params) {
    const uint32_t ndim = r.u32();
    std::vector<int> shape(ndim);
    for (uint32_t i = 0; i < ndim; ++i) shape[i] = static_cast<int>(r.u32());
    if (shape != p->value.shape) {
      throw DataFormatError(DataFormatError::Kind::BadHeader, "parameter shape mismatch in checkpoint");
    }
    for (double& v : p->value.data) v = r.f64();
  }
}

inline void save_model(const std::string& path, Model& m) { wire::write_file(path, serialize_model(m)); }

// Loads parameters into a freshly built model for `spec`.
inline Model load_model(const std::string& path, const ModelSpec& spec, bool require_classifier = true) {
  Model m = Model::build(spec, 0, require_classifier);
  const std::vector<uint8_t> bytes = wire::read_file(path);
  wire::Reader r(bytes.data(), bytes.size());
  deserialize_model_params(r, m);
  if (!r.at_end()) {
    throw DataFormatError(DataFormatError::Kind::BadHeader, "trailing bytes after model payload");
  }
  return m;
}

inline std::vector<uint8_t> serialize_decoupled(DecoupledModel& dm) {
  std::vector<uint8_t> out;
  for (char c : kDecoupledMagic) out.push_back(static_cast<uint8_t>(c));
  wire::put_u32(out, kFormatVersion);
  uint32_t flags = 0;
  if (dm.has_encoder()) flags |= 1u;
  if (dm.heterogeneous) flags |= 2u;
  wire::put_u32(out, flags);
  wire::put_u32(out, static_cast<uint32_t>(dm.num_classes));
  serialize_model_into(dm.encoder, out);
  serialize_model_into(dm.cloud, out);
  serialize_model_into(dm.co, out);
  serialize_model_into(dm.control, out);
  return out;
}

inline void save_decoupled(const std::string& path, DecoupledModel& dm) {
  wire::write_file(path, serialize_decoupled(dm));
}

// Loads parameters into a decoupled model that was built from the same specs.
inline void load_decoupled_params(const std::string& path, DecoupledModel& dm) {
  const std::vector<uint8_t> bytes = wire::read_file(path);
  wire::Reader r(bytes.data(), bytes.size());
  r.magic(kDecoupledMagic);
  if (r.u32() != kFormatVersion) {
    throw DataFormatError(DataFormatError::Kind::BadVersion, "decoupled checkpoint version");
  }
  const uint32_t flags = r.u32();
  if (((flags & 1u) != 0) != dm.has_encoder()) {
    throw DataFormatError(DataFormatError::Kind::BadHeader, "encoder presence mismatch");
  }
  const uint32_t classes = r.u32();
  if (static_cast<int>(classes) != dm.num_classes) {
    throw DataFormatError(DataFormatError::Kind::BadHeader, "num_classes mismatch in checkpoint");
  }
  deserialize_model_params(r, dm.encoder);
  deserialize_model_params(r, dm.cloud);
  deserialize_model_params(r, dm.co);
  deserialize_model_params(r, dm.control);
  if (!r.at_end()) {
    throw DataFormatError(DataFormatError::Kind::BadHeader, "trailing bytes after decoupled payload");
  }
}

}  // namespace dccl
