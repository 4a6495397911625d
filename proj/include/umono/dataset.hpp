#pragma once

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "umono/checkpoint.hpp"
#include "umono/netpbm.hpp"
#include "umono/physics.hpp"

namespace umono {

template <typename S>
struct RgbdSample {
  std::string id;
  Tensor<S> rgb;            // [3,H,W] in [0,1]
  Tensor<S> depth;          // [1,H,W] in [0,1]
  TransmissionMap<S> transmission;  // cached UDCP estimate, [1,H,W]
};

struct ManifestEntry {
  std::string id, rgb_path, depth_path;
};

// Manifest lines: "id rgb_path depth_path". Relative paths resolve against
// the manifest's directory.
inline std::vector<ManifestEntry> read_manifest(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw DataError("cannot open manifest: " + path);
  const auto base = std::filesystem::path(path).parent_path();
  std::vector<ManifestEntry> out;
  std::string line;
  int lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream is(line);
    ManifestEntry e;
    if (!(is >> e.id >> e.rgb_path >> e.depth_path))
      throw DataError(path + " line " + std::to_string(lineno) +
                      ": expected 'id rgb_path depth_path'");
    auto resolve = [&](const std::string& p) {
      std::filesystem::path fp(p);
      return fp.is_absolute() ? fp.string() : (base / fp).string();
    };
    e.rgb_path = resolve(e.rgb_path);
    e.depth_path = resolve(e.depth_path);
    out.push_back(std::move(e));
  }
  return out;
}

namespace dataset_detail {

inline std::uint64_t file_hash(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open file for hashing: " + path);
  std::vector<unsigned char> bytes(std::istreambuf_iterator<char>(f), {});
  return fnv1a64(bytes.data(), bytes.size());
}

// Transmission cache key: content hash of the source image plus the UDCP
// parameters that produced the map.
inline std::string cache_key(std::uint64_t rgb_hash, int radius, double t_min) {
  std::ostringstream os;
  os.precision(17);
  os << std::hex << rgb_hash << std::dec << ":r" << radius << ":t" << t_min;
  return os.str();
}

}  // namespace dataset_detail

// Loads one RGB-D pair and its transmission map. The transmission estimate
// is cached beside the RGB file as <id>.t.pgm with an <id>.t.hash sidecar;
// a stale or unreadable cache is recomputed.
template <typename S>
RgbdSample<S> load_sample(const ManifestEntry& e, int patch_radius, S t_min) {
  RgbdSample<S> s;
  s.id = e.id;
  if (!std::filesystem::exists(e.rgb_path)) throw DataError("missing rgb file: " + e.rgb_path);
  if (!std::filesystem::exists(e.depth_path))
    throw DataError("missing depth file: " + e.depth_path);
  s.rgb = read_ppm<S>(e.rgb_path);
  s.depth = read_pgm<S>(e.depth_path);
  if (s.rgb.dim(1) != s.depth.dim(1) || s.rgb.dim(2) != s.depth.dim(2))
    throw DataError("extent mismatch for sample " + e.id + ": rgb " + shape_str(s.rgb.shape) +
                    " vs depth " + shape_str(s.depth.shape) + " (no implicit resize)");

  const auto dir = std::filesystem::path(e.rgb_path).parent_path();
  const std::string cache_pgm = (dir / (e.id + ".t.pgm")).string();
  const std::string cache_hash = (dir / (e.id + ".t.hash")).string();
  const std::string key = dataset_detail::cache_key(dataset_detail::file_hash(e.rgb_path),
                                                    patch_radius, static_cast<double>(t_min));

  bool cache_ok = false;
  if (std::filesystem::exists(cache_pgm) && std::filesystem::exists(cache_hash)) {
    std::ifstream hf(cache_hash);
    std::string stored;
    if (hf && std::getline(hf, stored) && stored == key) {
      try {
        s.transmission.t = read_pgm<S>(cache_pgm);
        s.transmission.source = TransmissionSource::udcp;
        cache_ok = s.transmission.t.dim(1) == s.rgb.dim(1) &&
                   s.transmission.t.dim(2) == s.rgb.dim(2);
      } catch (const ParseError&) {
        cache_ok = false;  // corrupt cache: recompute below
      }
    }
  }
  if (!cache_ok) {
    const auto ambient = estimate_ambient(s.rgb);
    s.transmission = estimate_transmission_udcp(s.rgb, patch_radius, ambient, t_min);
    write_pgm(cache_pgm, s.transmission.t);
    std::ofstream hf(cache_hash, std::ios::trunc);
    hf << key << "\n";
  }
  return s;
}

template <typename S>
std::vector<RgbdSample<S>> load_dataset(const std::string& manifest_path, int patch_radius,
                                        S t_min) {
  std::vector<RgbdSample<S>> out;
  for (const auto& e : read_manifest(manifest_path))
    out.push_back(load_sample<S>(e, patch_radius, t_min));
  return out;
}

}  // namespace umono
