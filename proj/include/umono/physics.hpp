#pragma once

#include <algorithm>
#include <array>
#include <atomic>
#include <cstdint>
#include <numeric>
#include <vector>

#include "umono/rng.hpp"
#include "umono/tensor.hpp"

// Underwater image formation model, UDCP transmission estimation, and the
// procedural RGB-D scene generator. Everything here is plain (untaped) value
// arithmetic; transmission maps enter the network as constants.
namespace umono {

template <typename S>
struct FormationParams {
  std::array<S, 3> beta{S(0.6), S(0.9), S(1.1)};     // R,G,B attenuation per depth unit
  std::array<S, 3> ambient{S(0.18), S(0.45), S(0.55)};  // background water color

  void validate() const {
    for (S b : beta)
      if (b < S(0)) throw NumericError("formation: attenuation coefficients must be nonnegative");
    for (S a : ambient)
      if (a < S(0) || a > S(1)) throw NumericError("formation: ambient light must be in [0,1]");
  }
};

enum class TransmissionSource { analytic, udcp };

template <typename S>
struct TransmissionMap {
  Tensor<S> t;  // [1,H,W], values in [0,1]
  TransmissionSource source = TransmissionSource::analytic;
};

template <typename S>
struct SyntheticScene {
  Tensor<S> albedo;  // J, [3,H,W] in [0,1]
  Tensor<S> depth;   // [1,H,W] in [0, d_max]
  std::uint64_t seed = 0;
};

inline std::atomic<std::uint64_t>& transmission_clamp_count() {
  static std::atomic<std::uint64_t> count{0};
  return count;
}

// T = exp(-beta * d)
template <typename S>
TransmissionMap<S> depth_to_transmission(const Tensor<S>& depth, S beta) {
  if (beta < S(0)) throw NumericError("depth_to_transmission: beta must be nonnegative");
  TransmissionMap<S> out;
  out.t = Tensor<S>(depth.shape);
  for (std::size_t i = 0; i < depth.data.size(); ++i) {
    if (depth.data[i] < S(0)) throw NumericError("depth_to_transmission: negative depth");
    out.t.data[i] = std::exp(-beta * depth.data[i]);
  }
  out.source = TransmissionSource::analytic;
  return out;
}

// d = -ln(T)/beta. T must be positive; values slightly above 1 are clamped
// and counted.
template <typename S>
Tensor<S> transmission_to_depth(const Tensor<S>& t, S beta) {
  if (beta <= S(0)) throw NumericError("transmission_to_depth: beta must be positive");
  Tensor<S> d(t.shape);
  for (std::size_t i = 0; i < t.data.size(); ++i) {
    S v = t.data[i];
    if (v <= S(0))
      throw NumericError("transmission_to_depth: nonpositive transmission, depth undefined");
    if (v > S(1)) {
      v = S(1);
      transmission_clamp_count().fetch_add(1);
    }
    d.data[i] = -std::log(v) / beta;
  }
  return d;
}

// I_c = J_c * T_c + A_c * (1 - T_c), T_c = exp(-beta_c * d)
template <typename S>
Tensor<S> synthesize_underwater(const SyntheticScene<S>& scene, const FormationParams<S>& p) {
  p.validate();
  const int H = scene.depth.dim(1), W = scene.depth.dim(2);
  if (scene.albedo.shape != std::vector<int>{3, H, W})
    throw ShapeError("synthesize: albedo " + shape_str(scene.albedo.shape) +
                     " does not match depth " + shape_str(scene.depth.shape));
  Tensor<S> img({3, H, W});
  const std::int64_t n = std::int64_t(H) * W;
  for (int c = 0; c < 3; ++c) {
    const S beta = p.beta[static_cast<std::size_t>(c)];
    const S amb = p.ambient[static_cast<std::size_t>(c)];
    for (std::int64_t i = 0; i < n; ++i) {
      const S t = std::exp(-beta * scene.depth.data[static_cast<std::size_t>(i)]);
      img.data[static_cast<std::size_t>(c * n + i)] =
          scene.albedo.data[static_cast<std::size_t>(c * n + i)] * t + amb * (S(1) - t);
    }
  }
  return img;
}

namespace detail {
// Sliding-window minimum with clamped borders, separable across axes.
template <typename S>
void min_filter_rows(const std::vector<S>& in, std::vector<S>& out, int h, int w, int radius) {
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const int x0 = std::max(0, x - radius), x1 = std::min(w - 1, x + radius);
      S m = in[static_cast<std::size_t>(y * w + x0)];
      for (int xx = x0 + 1; xx <= x1; ++xx)
        m = std::min(m, in[static_cast<std::size_t>(y * w + xx)]);
      out[static_cast<std::size_t>(y * w + x)] = m;
    }
  }
}
template <typename S>
void min_filter_cols(const std::vector<S>& in, std::vector<S>& out, int h, int w, int radius) {
  for (int x = 0; x < w; ++x) {
    for (int y = 0; y < h; ++y) {
      const int y0 = std::max(0, y - radius), y1 = std::min(h - 1, y + radius);
      S m = in[static_cast<std::size_t>(y0 * w + x)];
      for (int yy = y0 + 1; yy <= y1; ++yy)
        m = std::min(m, in[static_cast<std::size_t>(yy * w + x)]);
      out[static_cast<std::size_t>(y * w + x)] = m;
    }
  }
}
}  // namespace detail

// T(x) = 1 - min over the patch of min(I_G/A_G, I_B/A_B), clamped to
// [t_min, 1]. The red channel is excluded (it attenuates too fast to carry a
// usable prior).
template <typename S>
TransmissionMap<S> estimate_transmission_udcp(const Tensor<S>& image, int patch_radius,
                                              const std::array<S, 3>& ambient,
                                              S t_min = S(0.05)) {
  if (image.rank() != 3 || image.dim(0) != 3)
    throw ShapeError("udcp: expects [3,H,W], got " + shape_str(image.shape));
  if (ambient[1] <= S(0) || ambient[2] <= S(0))
    throw NumericError("udcp: ambient G/B channels must be positive");
  const int H = image.dim(1), W = image.dim(2);
  const std::int64_t n = std::int64_t(H) * W;
  std::vector<S> dark(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i)
    dark[static_cast<std::size_t>(i)] =
        std::min(image.data[static_cast<std::size_t>(n + i)] / ambient[1],
                 image.data[static_cast<std::size_t>(2 * n + i)] / ambient[2]);
  std::vector<S> tmp(static_cast<std::size_t>(n));
  detail::min_filter_rows(dark, tmp, H, W, patch_radius);
  detail::min_filter_cols(tmp, dark, H, W, patch_radius);
  TransmissionMap<S> out;
  out.t = Tensor<S>({1, H, W});
  for (std::int64_t i = 0; i < n; ++i)
    out.t.data[static_cast<std::size_t>(i)] =
        std::clamp(S(1) - dark[static_cast<std::size_t>(i)], t_min, S(1));
  out.source = TransmissionSource::udcp;
  return out;
}

// Ambient estimate: mean color over the brightest 0.1% of pixels ranked by
// min(G,B).
template <typename S>
std::array<S, 3> estimate_ambient(const Tensor<S>& image) {
  if (image.rank() != 3 || image.dim(0) != 3)
    throw ShapeError("estimate_ambient: expects [3,H,W], got " + shape_str(image.shape));
  const std::int64_t n = std::int64_t(image.dim(1)) * image.dim(2);
  if (n == 0) throw ShapeError("estimate_ambient: empty image");
  std::vector<std::int64_t> idx(static_cast<std::size_t>(n));
  std::iota(idx.begin(), idx.end(), 0);
  auto score = [&](std::int64_t i) {
    return std::min(image.data[static_cast<std::size_t>(n + i)],
                    image.data[static_cast<std::size_t>(2 * n + i)]);
  };
  std::stable_sort(idx.begin(), idx.end(),
                   [&](std::int64_t a, std::int64_t b) { return score(a) > score(b); });
  const std::int64_t take = std::max<std::int64_t>(1, (n + 500) / 1000);
  std::array<S, 3> out{S(0), S(0), S(0)};
  for (std::int64_t k = 0; k < take; ++k)
    for (int c = 0; c < 3; ++c)
      out[static_cast<std::size_t>(c)] +=
          image.data[static_cast<std::size_t>(c * n + idx[static_cast<std::size_t>(k)])];
  for (int c = 0; c < 3; ++c) out[static_cast<std::size_t>(c)] /= static_cast<S>(take);
  return out;
}

// ---------------------------------------------------------------------------
// procedural scenes

enum class SceneKind { ramp, boxes, spheres, constant };

namespace detail {

// Seeded value noise in [lo,hi]: lattice of hashed values every `cell`
// pixels, bilinear interpolation between them.
template <typename S>
void value_noise(Tensor<S>& plane_dst, std::int64_t plane, int h, int w, int cell, double lo,
                 double hi, Rng& rng) {
  const int gh = h / cell + 2, gw = w / cell + 2;
  std::vector<double> lattice(static_cast<std::size_t>(gh * gw));
  for (auto& v : lattice) v = rng.uniform(lo, hi);
  for (int y = 0; y < h; ++y) {
    const double fy = double(y) / cell;
    const int y0 = static_cast<int>(fy);
    const double ty = fy - y0;
    for (int x = 0; x < w; ++x) {
      const double fx = double(x) / cell;
      const int x0 = static_cast<int>(fx);
      const double tx = fx - x0;
      const double v00 = lattice[static_cast<std::size_t>(y0 * gw + x0)];
      const double v01 = lattice[static_cast<std::size_t>(y0 * gw + x0 + 1)];
      const double v10 = lattice[static_cast<std::size_t>((y0 + 1) * gw + x0)];
      const double v11 = lattice[static_cast<std::size_t>((y0 + 1) * gw + x0 + 1)];
      const double v = (1 - ty) * ((1 - tx) * v00 + tx * v01) + ty * ((1 - tx) * v10 + tx * v11);
      plane_dst.data[static_cast<std::size_t>(plane + y * w + x)] = static_cast<S>(v);
    }
  }
}

}  // namespace detail

// Deterministic per seed. Depth lives in [0.05, 1]. The albedo carries a
// lattice of pixels with J_G = J_B = 0 spaced 8 px apart, so every 15x15
// patch contains a G/B-dark pixel and UDCP can recover transmission.
template <typename S>
SyntheticScene<S> generate_scene(std::uint64_t seed, int h, int w, SceneKind kind) {
  if (h % 32 != 0 || w % 32 != 0)
    throw ShapeError("generate_scene: extents " + std::to_string(h) + "x" + std::to_string(w) +
                     " must be divisible by 32");
  SyntheticScene<S> scene;
  scene.seed = seed;
  scene.albedo = Tensor<S>({3, h, w});
  scene.depth = Tensor<S>({1, h, w});
  Rng rng(seed * 0x9e3779b97f4a7c15ull + static_cast<std::uint64_t>(kind));

  const std::int64_t n = std::int64_t(h) * w;
  switch (kind) {
    case SceneKind::ramp: {
      const double d0 = rng.uniform(0.05, 0.25), d1 = rng.uniform(0.7, 1.0);
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
          scene.depth.data[static_cast<std::size_t>(y * w + x)] =
              static_cast<S>(d0 + (d1 - d0) * double(x) / (w - 1));
      break;
    }
    case SceneKind::boxes: {
      const double back = rng.uniform(0.8, 1.0);
      for (std::int64_t i = 0; i < n; ++i)
        scene.depth.data[static_cast<std::size_t>(i)] = static_cast<S>(back);
      const int count = 3 + static_cast<int>(rng.below(4));
      for (int b = 0; b < count; ++b) {
        const int bw = w / 8 + static_cast<int>(rng.below(static_cast<std::uint64_t>(w / 4)));
        const int bh = h / 8 + static_cast<int>(rng.below(static_cast<std::uint64_t>(h / 4)));
        const int x0 = static_cast<int>(rng.below(static_cast<std::uint64_t>(w - bw)));
        const int y0 = static_cast<int>(rng.below(static_cast<std::uint64_t>(h - bh)));
        const double d = rng.uniform(0.15, 0.75);
        for (int y = y0; y < y0 + bh; ++y)
          for (int x = x0; x < x0 + bw; ++x) {
            auto& v = scene.depth.data[static_cast<std::size_t>(y * w + x)];
            v = std::min(v, static_cast<S>(d));
          }
      }
      break;
    }
    case SceneKind::spheres: {
      // ground plane receding toward the top, spheres in front
      const double near = rng.uniform(0.3, 0.5), far = rng.uniform(0.85, 1.0);
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
          scene.depth.data[static_cast<std::size_t>(y * w + x)] =
              static_cast<S>(far - (far - near) * double(y) / (h - 1));
      const int count = 2 + static_cast<int>(rng.below(3));
      for (int s = 0; s < count; ++s) {
        const double cx = rng.uniform(0.15, 0.85) * w, cy = rng.uniform(0.15, 0.85) * h;
        const double r = rng.uniform(0.08, 0.2) * std::min(h, w);
        const double dc = rng.uniform(0.2, 0.7);
        for (int y = 0; y < h; ++y)
          for (int x = 0; x < w; ++x) {
            const double rho2 = (x - cx) * (x - cx) + (y - cy) * (y - cy);
            if (rho2 >= r * r) continue;
            const double bulge = std::sqrt(1.0 - rho2 / (r * r));
            auto& v = scene.depth.data[static_cast<std::size_t>(y * w + x)];
            v = std::min(v, static_cast<S>(dc * (1.0 - 0.3 * bulge)));
          }
      }
      break;
    }
    case SceneKind::constant: {
      const double d = rng.uniform(0.2, 0.9);
      for (std::int64_t i = 0; i < n; ++i)
        scene.depth.data[static_cast<std::size_t>(i)] = static_cast<S>(d);
      break;
    }
  }
  for (auto& v : scene.depth.data) v = std::clamp(v, S(0.05), S(1));

  for (int c = 0; c < 3; ++c)
    detail::value_noise(scene.albedo, c * n, h, w, 8, 0.15, 1.0, rng);
  // dark lattice: G and B exactly zero every 8 px
  for (int y = 0; y < h; y += 8)
    for (int x = 0; x < w; x += 8) {
      scene.albedo.data[static_cast<std::size_t>(n + y * w + x)] = S(0);
      scene.albedo.data[static_cast<std::size_t>(2 * n + y * w + x)] = S(0);
    }
  return scene;
}

}  // namespace umono
