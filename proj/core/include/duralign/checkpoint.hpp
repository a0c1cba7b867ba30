#pragma once

// Checkpoint format (bit-exact): magic "PTAC2\0", u32 version=1, u32 entry
// count; per entry u32 name length, UTF-8 name, u32 rank, u32 dims[], 32-bit
// little-endian floats row-major; trailing u64 step counter. Entries are
// written in the store's canonical (sorted) order, so save -> load -> save is
// byte-identical.

#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "duralign/errors.hpp"
#include "duralign/params.hpp"

namespace duralign {

namespace ckpt_io {

inline void put_u32(std::ostream& os, uint32_t x) {
  unsigned char b[4] = {static_cast<unsigned char>(x), static_cast<unsigned char>(x >> 8),
                        static_cast<unsigned char>(x >> 16), static_cast<unsigned char>(x >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

inline void put_u64(std::ostream& os, uint64_t x) {
  put_u32(os, static_cast<uint32_t>(x));
  put_u32(os, static_cast<uint32_t>(x >> 32));
}

inline uint32_t get_u32(std::istream& is, const char* what) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  if (!is) throw IoError(std::string("checkpoint load: truncated reading ") + what);
  return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
         (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
}

inline uint64_t get_u64(std::istream& is, const char* what) {
  uint64_t lo = get_u32(is, what);
  uint64_t hi = get_u32(is, what);
  return lo | (hi << 32);
}

}  // namespace ckpt_io

struct CheckpointEntry {
  std::string name;
  Shape shape;
  std::vector<float> values;
};

struct RawCheckpoint {
  std::vector<CheckpointEntry> entries;
  uint64_t step = 0;

  const CheckpointEntry* find(const std::string& name) const {
    for (const auto& e : entries)
      if (e.name == name) return &e;
    return nullptr;
  }
};

template <class T>
void save_checkpoint(const ParameterStore<T>& store, uint64_t step, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open for writing: " + path);
  os.write("PTAC2\0", 6);
  ckpt_io::put_u32(os, 1);
  ckpt_io::put_u32(os, static_cast<uint32_t>(store.size()));
  for (const auto& [name, entry] : store) {
    ckpt_io::put_u32(os, static_cast<uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    ckpt_io::put_u32(os, static_cast<uint32_t>(entry.value.rank()));
    for (int d : entry.value.shape) ckpt_io::put_u32(os, static_cast<uint32_t>(d));
    for (T x : entry.value.v) {
      float f = static_cast<float>(x);
      static_assert(sizeof(float) == 4);
      os.write(reinterpret_cast<const char*>(&f), 4);
    }
  }
  ckpt_io::put_u64(os, step);
  if (!os) throw IoError("write failed: " + path);
}

inline RawCheckpoint load_checkpoint_raw(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open for reading: " + path);
  char magic[6];
  is.read(magic, 6);
  if (!is || std::memcmp(magic, "PTAC2\0", 6) != 0)
    throw IoError("checkpoint load: bad magic in " + path);
  uint32_t version = ckpt_io::get_u32(is, "version");
  if (version != 1)
    throw IoError("checkpoint load: unsupported version " + std::to_string(version));
  uint32_t count = ckpt_io::get_u32(is, "entry count");
  RawCheckpoint raw;
  raw.entries.reserve(count);
  for (uint32_t i = 0; i < count; ++i) {
    CheckpointEntry e;
    uint32_t name_len = ckpt_io::get_u32(is, "name length");
    if (name_len > 4096) throw IoError("checkpoint load: implausible name length");
    e.name.resize(name_len);
    is.read(e.name.data(), name_len);
    if (!is) throw IoError("checkpoint load: truncated name");
    uint32_t rank = ckpt_io::get_u32(is, "rank");
    if (rank > 8) throw IoError("checkpoint load: implausible rank");
    int64_t total = 1;
    for (uint32_t r = 0; r < rank; ++r) {
      uint32_t d = ckpt_io::get_u32(is, "dimension");
      e.shape.push_back(static_cast<int>(d));
      total *= d;
    }
    if (total < 0 || total > (int64_t(1) << 28)) throw IoError("checkpoint load: implausible tensor size");
    e.values.resize(static_cast<size_t>(total));
    is.read(reinterpret_cast<char*>(e.values.data()),
            static_cast<std::streamsize>(e.values.size() * sizeof(float)));
    if (!is) throw IoError("checkpoint load: truncated tensor data for " + e.name);
    raw.entries.push_back(std::move(e));
  }
  raw.step = ckpt_io::get_u64(is, "step counter");
  return raw;
}

/// Fills a registered store from a raw checkpoint. Entry sets must match
/// exactly in both directions.
template <class T>
uint64_t restore_checkpoint(ParameterStore<T>& store, const RawCheckpoint& raw) {
  if (raw.entries.size() != store.size())
    throw ConfigError("checkpoint restore: entry count mismatch (file " +
                      std::to_string(raw.entries.size()) + ", model " +
                      std::to_string(store.size()) + ")");
  for (const auto& e : raw.entries) {
    if (!store.has(e.name)) throw ConfigError("checkpoint restore: unexpected entry " + e.name);
    auto& dst = store.value(e.name);
    if (dst.shape != e.shape)
      throw ConfigError("checkpoint restore: shape mismatch for " + e.name + " (file " +
                        shape_str(e.shape) + ", model " + shape_str(dst.shape) + ")");
    for (size_t i = 0; i < e.values.size(); ++i) dst.v[i] = static_cast<T>(e.values[i]);
  }
  return raw.step;
}

template <class T>
uint64_t load_checkpoint(ParameterStore<T>& store, const std::string& path) {
  return restore_checkpoint(store, load_checkpoint_raw(path));
}

}  // namespace duralign
