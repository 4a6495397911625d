#pragma once

#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "umono/tensor.hpp"

// Binary NetPBM readers/writers (P6 RGB, P5 gray), maxval 255 or 65535.
// 16-bit samples are big-endian per the format. Values map to [0,1] on read;
// writers quantize with round(v * maxval).
namespace umono {

namespace netpbm_detail {

struct ByteStream {
  std::vector<unsigned char> bytes;
  std::size_t pos = 0;
  std::string path;

  [[noreturn]] void fail(const std::string& what) const {
    throw ParseError(path + ": " + what + " at byte offset " + std::to_string(pos));
  }

  int peek() const { return pos < bytes.size() ? bytes[pos] : -1; }
  int get() { return pos < bytes.size() ? bytes[pos++] : -1; }

  void skip_ws_and_comments() {
    while (true) {
      int c = peek();
      if (c == '#') {
        while (c != -1 && c != '\n') c = get();
      } else if (c == ' ' || c == '\t' || c == '\r' || c == '\n') {
        get();
      } else {
        return;
      }
    }
  }

  // Unsigned decimal token.
  std::int64_t read_number() {
    skip_ws_and_comments();
    if (peek() < '0' || peek() > '9') fail("expected a decimal number");
    std::int64_t v = 0;
    while (peek() >= '0' && peek() <= '9') {
      v = v * 10 + (get() - '0');
      if (v > 1'000'000'000) fail("number out of range");
    }
    return v;
  }
};

inline ByteStream slurp(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ParseError(path + ": cannot open file");
  ByteStream s;
  s.path = path;
  s.bytes.assign(std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>());
  return s;
}

struct Header {
  int width, height, maxval, channels;
  std::size_t raster_offset;
};

inline Header read_header(ByteStream& s, const char* magic_want, int channels) {
  if (s.get() != 'P' || s.get() != magic_want[1]) {
    s.pos = 0;
    s.fail(std::string("bad magic, expected ") + magic_want);
  }
  Header h;
  h.channels = channels;
  h.width = static_cast<int>(s.read_number());
  h.height = static_cast<int>(s.read_number());
  h.maxval = static_cast<int>(s.read_number());
  if (h.width <= 0 || h.height <= 0) s.fail("non-positive image extents");
  if (h.maxval != 255 && h.maxval != 65535)
    s.fail("unsupported maxval " + std::to_string(h.maxval) + " (expected 255 or 65535)");
  int c = s.get();
  if (c != ' ' && c != '\t' && c != '\r' && c != '\n') s.fail("expected whitespace before raster");
  h.raster_offset = s.pos;
  return h;
}

template <typename S>
Tensor<S> read_raster(ByteStream& s, const Header& h) {
  const std::int64_t n = std::int64_t(h.width) * h.height;
  const int bytes_per = h.maxval == 255 ? 1 : 2;
  const std::size_t need = static_cast<std::size_t>(n) * h.channels * bytes_per;
  if (s.bytes.size() - s.pos < need) s.fail("truncated raster payload");
  Tensor<S> out({h.channels, h.height, h.width});
  const S inv = S(1) / static_cast<S>(h.maxval);
  for (std::int64_t i = 0; i < n; ++i) {
    for (int c = 0; c < h.channels; ++c) {
      std::uint32_t v;
      if (bytes_per == 1) {
        v = s.bytes[s.pos++];
      } else {
        v = static_cast<std::uint32_t>(s.bytes[s.pos]) << 8 | s.bytes[s.pos + 1];
        s.pos += 2;
      }
      out.data[static_cast<std::size_t>(c * n + i)] = static_cast<S>(v) * inv;
    }
  }
  return out;
}

inline void write_file(const std::string& path, const std::string& header,
                       const std::vector<unsigned char>& raster) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw ParseError(path + ": cannot open for writing");
  f.write(header.data(), static_cast<std::streamsize>(header.size()));
  f.write(reinterpret_cast<const char*>(raster.data()), static_cast<std::streamsize>(raster.size()));
  if (!f) throw ParseError(path + ": short write");
}

template <typename S>
std::vector<unsigned char> quantize(const Tensor<S>& t, int maxval) {
  const std::int64_t n = std::int64_t(t.dim(1)) * t.dim(2);
  const int channels = t.dim(0);
  std::vector<unsigned char> out;
  out.reserve(static_cast<std::size_t>(n) * channels * (maxval == 255 ? 1 : 2));
  for (std::int64_t i = 0; i < n; ++i) {
    for (int c = 0; c < channels; ++c) {
      double v = static_cast<double>(t.data[static_cast<std::size_t>(c * n + i)]);
      long q = std::lround(v * maxval);
      q = std::max(0l, std::min(static_cast<long>(maxval), q));
      if (maxval == 255) {
        out.push_back(static_cast<unsigned char>(q));
      } else {
        out.push_back(static_cast<unsigned char>(q >> 8));
        out.push_back(static_cast<unsigned char>(q & 0xff));
      }
    }
  }
  return out;
}

}  // namespace netpbm_detail

template <typename S>
Tensor<S> read_ppm(const std::string& path) {
  auto s = netpbm_detail::slurp(path);
  auto h = netpbm_detail::read_header(s, "P6", 3);
  return netpbm_detail::read_raster<S>(s, h);
}

template <typename S>
Tensor<S> read_pgm(const std::string& path) {
  auto s = netpbm_detail::slurp(path);
  auto h = netpbm_detail::read_header(s, "P5", 1);
  return netpbm_detail::read_raster<S>(s, h);
}

template <typename S>
void write_ppm(const std::string& path, const Tensor<S>& rgb, int maxval = 65535) {
  if (rgb.rank() != 3 || rgb.dim(0) != 3)
    throw ShapeError("write_ppm: expects [3,H,W], got " + shape_str(rgb.shape));
  std::string header = "P6\n" + std::to_string(rgb.dim(2)) + " " + std::to_string(rgb.dim(1)) +
                       "\n" + std::to_string(maxval) + "\n";
  netpbm_detail::write_file(path, header, netpbm_detail::quantize(rgb, maxval));
}

// 16-bit by default: 8 bits quantize depth too coarsely for metric work.
template <typename S>
void write_pgm(const std::string& path, const Tensor<S>& gray, int maxval = 65535) {
  if (gray.rank() != 3 || gray.dim(0) != 1)
    throw ShapeError("write_pgm: expects [1,H,W], got " + shape_str(gray.shape));
  std::string header = "P5\n" + std::to_string(gray.dim(2)) + " " + std::to_string(gray.dim(1)) +
                       "\n" + std::to_string(maxval) + "\n";
  netpbm_detail::write_file(path, header, netpbm_detail::quantize(gray, maxval));
}

// Depth visualization: 16-bit PGM of the prediction, plus an |pred-gt| error
// image when ground truth is supplied.
template <typename S>
void export_depth_visual(const Tensor<S>& depth, const Tensor<S>* gt,
                         const std::string& path_prefix) {
  write_pgm(path_prefix + ".depth.pgm", depth);
  if (gt) {
    if (!depth.same_shape(*gt))
      throw ShapeError("export_depth_visual: depth " + shape_str(depth.shape) +
                       " does not match gt " + shape_str(gt->shape));
    Tensor<S> err(depth.shape);
    for (std::size_t i = 0; i < err.data.size(); ++i)
      err.data[i] = std::abs(depth.data[i] - gt->data[i]);
    write_pgm(path_prefix + ".err.pgm", err);
  }
}

}  // namespace umono
