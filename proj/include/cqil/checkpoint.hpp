#pragma once

#include <cstdint>
#include <fstream>
#include <map>
#include <string>

#include "cqil/common.hpp"
#include "cqil/tensor.hpp"

#include <json.hpp>

namespace cqil {

// Single-file archive of named tensors plus a JSON metadata header. All
// integers little-endian; tensor payloads are raw IEEE bytes, so a save/load
// round trip is bit-exact.
//
//   magic "CQILCKPT" | u32 version | u64 meta_len | meta JSON
//   u32 n_arrays | per array: u16 name_len, name, u8 scalar_size,
//                             u8 ndim, u64 dims..., payload

template <typename T>
class TensorArchive {
 public:
  static constexpr uint32_t kVersion = 1;

  nlohmann::json meta;

  void put(const std::string& name, const Tensor<T>& t) {
    CQIL_CHECK_MSG(!arrays_.count(name), "duplicate archive entry " << name);
    arrays_.emplace(name, t);
  }

  bool has(const std::string& name) const { return arrays_.count(name) != 0; }

  const Tensor<T>& get(const std::string& name) const {
    auto it = arrays_.find(name);
    CQIL_CHECK_MSG(it != arrays_.end(), "archive entry missing: " << name);
    return it->second;
  }

  const std::map<std::string, Tensor<T>>& arrays() const { return arrays_; }

  void save(const std::string& path) const {
    std::ofstream f(path, std::ios::binary);
    CQIL_CHECK_MSG(f.good(), "cannot open " << path << " for writing");
    f.write("CQILCKPT", 8);
    write_u32(f, kVersion);
    const std::string meta_str = meta.dump();
    write_u64(f, meta_str.size());
    f.write(meta_str.data(), static_cast<std::streamsize>(meta_str.size()));
    write_u32(f, static_cast<uint32_t>(arrays_.size()));
    for (const auto& [name, t] : arrays_) {
      CQIL_CHECK(name.size() < 65535);
      write_u16(f, static_cast<uint16_t>(name.size()));
      f.write(name.data(), static_cast<std::streamsize>(name.size()));
      f.put(static_cast<char>(sizeof(T)));
      f.put(static_cast<char>(t.ndim()));
      for (size_t d = 0; d < t.ndim(); ++d) write_u64(f, t.dim(d));
      f.write(reinterpret_cast<const char*>(t.data()),
              static_cast<std::streamsize>(t.numel() * sizeof(T)));
    }
    CQIL_CHECK_MSG(f.good(), "short write to " << path);
  }

  static TensorArchive load(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    CQIL_CHECK_MSG(f.good(), "cannot open checkpoint " << path);
    char magic[8];
    f.read(magic, 8);
    CQIL_CHECK_MSG(f.good() && std::string(magic, 8) == "CQILCKPT",
                   "corrupt checkpoint " << path << ": bad magic");
    const uint32_t version = read_u32(f, path);
    CQIL_CHECK_MSG(version == kVersion,
                   "checkpoint " << path << ": unsupported version " << version);
    const uint64_t meta_len = read_u64(f, path);
    std::string meta_str(meta_len, '\0');
    f.read(meta_str.data(), static_cast<std::streamsize>(meta_len));
    CQIL_CHECK_MSG(f.good(), "corrupt checkpoint " << path << ": truncated metadata");
    TensorArchive ar;
    try {
      ar.meta = nlohmann::json::parse(meta_str);
    } catch (const std::exception& e) {
      throw Error("corrupt checkpoint " + path + ": bad metadata: " + e.what());
    }
    const uint32_t n = read_u32(f, path);
    for (uint32_t i = 0; i < n; ++i) {
      const uint16_t name_len = read_u16(f, path);
      std::string name(name_len, '\0');
      f.read(name.data(), name_len);
      const int scalar_size = f.get();
      const int ndim = f.get();
      CQIL_CHECK_MSG(f.good() && ndim >= 0 && ndim <= 8,
                     "corrupt checkpoint " << path << ": bad array header");
      CQIL_CHECK_MSG(scalar_size == sizeof(T),
                     "checkpoint " << path << ": scalar width " << scalar_size
                                   << " does not match this build");
      std::vector<size_t> shape(static_cast<size_t>(ndim));
      for (auto& d : shape) d = read_u64(f, path);
      Tensor<T> t(shape);
      f.read(reinterpret_cast<char*>(t.data()),
             static_cast<std::streamsize>(t.numel() * sizeof(T)));
      CQIL_CHECK_MSG(f.good(), "corrupt checkpoint " << path << ": truncated array "
                                                     << name);
      ar.arrays_.emplace(std::move(name), std::move(t));
    }
    return ar;
  }

 private:
  static void write_u16(std::ofstream& f, uint16_t v) {
    char b[2] = {static_cast<char>(v & 0xff), static_cast<char>(v >> 8)};
    f.write(b, 2);
  }
  static void write_u32(std::ofstream& f, uint32_t v) {
    char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
    f.write(b, 4);
  }
  static void write_u64(std::ofstream& f, uint64_t v) {
    char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
    f.write(b, 8);
  }
  static uint16_t read_u16(std::ifstream& f, const std::string& path) {
    unsigned char b[2];
    f.read(reinterpret_cast<char*>(b), 2);
    CQIL_CHECK_MSG(f.good(), "corrupt checkpoint " << path << ": unexpected EOF");
    return static_cast<uint16_t>(b[0] | (b[1] << 8));
  }
  static uint32_t read_u32(std::ifstream& f, const std::string& path) {
    unsigned char b[4];
    f.read(reinterpret_cast<char*>(b), 4);
    CQIL_CHECK_MSG(f.good(), "corrupt checkpoint " << path << ": unexpected EOF");
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(b[i]) << (8 * i);
    return v;
  }
  static uint64_t read_u64(std::ifstream& f, const std::string& path) {
    unsigned char b[8];
    f.read(reinterpret_cast<char*>(b), 8);
    CQIL_CHECK_MSG(f.good(), "corrupt checkpoint " << path << ": unexpected EOF");
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(b[i]) << (8 * i);
    return v;
  }

  std::map<std::string, Tensor<T>> arrays_;
};

}  // namespace cqil
