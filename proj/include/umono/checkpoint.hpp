#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "umono/tensor.hpp"

// Checkpoint container: a flat table of named typed arrays with a trailing
// whole-file checksum. All integers and payloads are little-endian regardless
// of host, so files compare byte-for-byte across machines.
//
//   "UMCK" | u32 version | u32 record count
//   per record: u16 name_len | name | u8 dtype | u8 rank | u32 dims[rank] | payload
//   u64 fnv1a-64 of everything above
namespace umono {

enum class CkptDtype : std::uint8_t { f32 = 1, f64 = 2, u64 = 3, bytes = 4 };

inline std::uint64_t fnv1a64(const unsigned char* data, std::size_t n,
                             std::uint64_t h = 0xcbf29ce484222325ull) {
  for (std::size_t i = 0; i < n; ++i) {
    h ^= data[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

namespace ckpt_detail {

constexpr std::uint32_t kVersion = 1;

inline void put_u16(std::vector<unsigned char>& b, std::uint16_t v) {
  b.push_back(static_cast<unsigned char>(v & 0xff));
  b.push_back(static_cast<unsigned char>(v >> 8));
}
inline void put_u32(std::vector<unsigned char>& b, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) b.push_back(static_cast<unsigned char>((v >> (8 * i)) & 0xff));
}
inline void put_u64(std::vector<unsigned char>& b, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) b.push_back(static_cast<unsigned char>((v >> (8 * i)) & 0xff));
}

struct Cursor {
  const std::vector<unsigned char>* bytes;
  std::size_t pos = 0;
  std::string path;

  [[noreturn]] void fail(const std::string& what) const {
    throw ParseError(path + ": " + what + " at byte offset " + std::to_string(pos));
  }
  void need(std::size_t n) const {
    if (bytes->size() - pos < n) fail("truncated container");
  }
  std::uint16_t u16() {
    need(2);
    std::uint16_t v = static_cast<std::uint16_t>((*bytes)[pos] | ((*bytes)[pos + 1] << 8));
    pos += 2;
    return v;
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>((*bytes)[pos + i]) << (8 * i);
    pos += 4;
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>((*bytes)[pos + i]) << (8 * i);
    pos += 8;
    return v;
  }
  std::uint8_t u8() {
    need(1);
    return (*bytes)[pos++];
  }
};

}  // namespace ckpt_detail

struct CkptRecord {
  CkptDtype dtype;
  std::vector<int> dims;
  std::vector<unsigned char> payload;

  std::int64_t count() const {
    std::int64_t n = 1;
    for (int d : dims) n *= d;
    return n;
  }
};

class CheckpointWriter {
 public:
  template <typename S>
  void add_tensor(const std::string& name, const Tensor<S>& t) {
    static_assert(sizeof(S) == 4 || sizeof(S) == 8);
    CkptRecord r;
    r.dtype = sizeof(S) == 4 ? CkptDtype::f32 : CkptDtype::f64;
    r.dims = t.shape;
    r.payload.reserve(t.data.size() * sizeof(S));
    for (S v : t.data) {
      if constexpr (sizeof(S) == 4) {
        std::uint32_t bits;
        std::memcpy(&bits, &v, 4);
        ckpt_detail::put_u32(r.payload, bits);
      } else {
        std::uint64_t bits;
        std::memcpy(&bits, &v, 8);
        ckpt_detail::put_u64(r.payload, bits);
      }
    }
    add(name, std::move(r));
  }

  void add_u64s(const std::string& name, const std::vector<std::uint64_t>& vals) {
    CkptRecord r;
    r.dtype = CkptDtype::u64;
    r.dims = {static_cast<int>(vals.size())};
    for (auto v : vals) ckpt_detail::put_u64(r.payload, v);
    add(name, std::move(r));
  }

  void add_text(const std::string& name, const std::string& text) {
    CkptRecord r;
    r.dtype = CkptDtype::bytes;
    r.dims = {static_cast<int>(text.size())};
    r.payload.assign(text.begin(), text.end());
    add(name, std::move(r));
  }

  // Atomic: writes to a temp file in the target directory, then renames.
  void save(const std::string& path) const {
    std::vector<unsigned char> buf;
    buf.insert(buf.end(), {'U', 'M', 'C', 'K'});
    ckpt_detail::put_u32(buf, ckpt_detail::kVersion);
    ckpt_detail::put_u32(buf, static_cast<std::uint32_t>(records_.size()));
    for (const auto& [name, r] : records_) {
      ckpt_detail::put_u16(buf, static_cast<std::uint16_t>(name.size()));
      buf.insert(buf.end(), name.begin(), name.end());
      buf.push_back(static_cast<unsigned char>(r.dtype));
      buf.push_back(static_cast<unsigned char>(r.dims.size()));
      for (int d : r.dims) ckpt_detail::put_u32(buf, static_cast<std::uint32_t>(d));
      buf.insert(buf.end(), r.payload.begin(), r.payload.end());
    }
    ckpt_detail::put_u64(buf, fnv1a64(buf.data(), buf.size()));

    const std::string tmp = path + ".tmp";
    {
      std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
      if (!f) throw ParseError(tmp + ": cannot open for writing");
      f.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
      if (!f) throw ParseError(tmp + ": short write");
    }
    std::filesystem::rename(tmp, path);
  }

 private:
  void add(const std::string& name, CkptRecord r) {
    if (records_.count(name)) throw ParseError("checkpoint: duplicate record name " + name);
    if (name.size() > 0xffff) throw ParseError("checkpoint: record name too long");
    records_.emplace(name, std::move(r));
  }

  // std::map keeps serialization order deterministic
  std::map<std::string, CkptRecord> records_;
};

class CheckpointData {
 public:
  static CheckpointData load(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw ParseError(path + ": cannot open file");
    std::vector<unsigned char> bytes(std::istreambuf_iterator<char>(f), {});
    ckpt_detail::Cursor c{&bytes, 0, path};
    c.need(4);
    if (bytes[0] != 'U' || bytes[1] != 'M' || bytes[2] != 'C' || bytes[3] != 'K')
      c.fail("bad magic, expected UMCK");
    c.pos = 4;
    const std::uint32_t version = c.u32();
    if (version != ckpt_detail::kVersion)
      c.fail("unsupported container version " + std::to_string(version));
    if (bytes.size() < 8) c.fail("truncated container");
    const std::uint64_t want =
        fnv1a64(bytes.data(), bytes.size() - 8);
    ckpt_detail::Cursor tail{&bytes, bytes.size() - 8, path};
    if (tail.u64() != want) throw ParseError(path + ": checksum mismatch (corrupt file)");

    CheckpointData out;
    const std::uint32_t count = c.u32();
    for (std::uint32_t i = 0; i < count; ++i) {
      const std::uint16_t name_len = c.u16();
      c.need(name_len);
      std::string name(reinterpret_cast<const char*>(bytes.data() + c.pos), name_len);
      c.pos += name_len;
      CkptRecord r;
      const std::uint8_t dt = c.u8();
      if (dt < 1 || dt > 4) c.fail("unknown dtype code " + std::to_string(dt));
      r.dtype = static_cast<CkptDtype>(dt);
      const std::uint8_t rank = c.u8();
      for (int d = 0; d < rank; ++d) r.dims.push_back(static_cast<int>(c.u32()));
      const std::size_t unit = r.dtype == CkptDtype::f32   ? 4
                               : r.dtype == CkptDtype::f64 ? 8
                               : r.dtype == CkptDtype::u64 ? 8
                                                           : 1;
      const std::size_t len = static_cast<std::size_t>(r.count()) * unit;
      c.need(len);
      r.payload.assign(bytes.begin() + static_cast<std::ptrdiff_t>(c.pos),
                       bytes.begin() + static_cast<std::ptrdiff_t>(c.pos + len));
      c.pos += len;
      if (out.records_.count(name)) c.fail("duplicate record name " + name);
      out.records_.emplace(std::move(name), std::move(r));
    }
    if (c.pos != bytes.size() - 8) c.fail("trailing garbage after records");
    return out;
  }

  bool has(const std::string& name) const { return records_.count(name) != 0; }

  const CkptRecord& record(const std::string& name) const {
    auto it = records_.find(name);
    if (it == records_.end()) throw ParseError("checkpoint: missing record " + name);
    return it->second;
  }

  template <typename S>
  Tensor<S> tensor(const std::string& name) const {
    const auto& r = record(name);
    const CkptDtype want = sizeof(S) == 4 ? CkptDtype::f32 : CkptDtype::f64;
    if (r.dtype != want)
      throw ParseError("checkpoint: record " + name +
                       " has a different precision than this run (no implicit conversion)");
    Tensor<S> t(r.dims);
    for (std::size_t i = 0; i < t.data.size(); ++i) {
      if constexpr (sizeof(S) == 4) {
        std::uint32_t bits = 0;
        for (int b = 0; b < 4; ++b)
          bits |= static_cast<std::uint32_t>(r.payload[i * 4 + static_cast<std::size_t>(b)])
                  << (8 * b);
        std::memcpy(&t.data[i], &bits, 4);
      } else {
        std::uint64_t bits = 0;
        for (int b = 0; b < 8; ++b)
          bits |= static_cast<std::uint64_t>(r.payload[i * 8 + static_cast<std::size_t>(b)])
                  << (8 * b);
        std::memcpy(&t.data[i], &bits, 8);
      }
    }
    return t;
  }

  std::vector<std::uint64_t> u64s(const std::string& name) const {
    const auto& r = record(name);
    if (r.dtype != CkptDtype::u64) throw ParseError("checkpoint: record " + name + " is not u64");
    std::vector<std::uint64_t> out(static_cast<std::size_t>(r.count()));
    for (std::size_t i = 0; i < out.size(); ++i) {
      std::uint64_t v = 0;
      for (int b = 0; b < 8; ++b)
        v |= static_cast<std::uint64_t>(r.payload[i * 8 + static_cast<std::size_t>(b)]) << (8 * b);
      out[i] = v;
    }
    return out;
  }

  std::string text(const std::string& name) const {
    const auto& r = record(name);
    if (r.dtype != CkptDtype::bytes) throw ParseError("checkpoint: record " + name + " is not text");
    return std::string(r.payload.begin(), r.payload.end());
  }

  const std::map<std::string, CkptRecord>& records() const { return records_; }

 private:
  std::map<std::string, CkptRecord> records_;
};

}  // namespace umono
