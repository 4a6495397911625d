#pragma once

// Independent reference implementations used as test oracles. Everything here
// is written as plain loops against the raw data arrays, deliberately sharing
// no code path with the library ops it checks.

#include <algorithm>
#include <cmath>
#include <vector>

#include "umono/rng.hpp"
#include "umono/tensor.hpp"

namespace oracle {

using umono::Rng;
using umono::Tensor;

template <typename S>
Tensor<S> random_tensor(std::vector<int> shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor<S> t(shape);
  for (auto& v : t.data) v = static_cast<S>(rng.uniform(lo, hi));
  return t;
}

template <typename S>
Tensor<S> matmul(const Tensor<S>& a, const Tensor<S>& b) {
  const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor<S> c({m, n});
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) {
      S acc = S(0);
      for (int p = 0; p < k; ++p) acc += a.at({i, p}) * b.at({p, j});
      c.at({i, j}) = acc;
    }
  return c;
}

template <typename S>
std::vector<S> softmax_vec(const std::vector<S>& x) {
  std::vector<S> y(x.size());
  S denom = S(0);
  for (std::size_t i = 0; i < x.size(); ++i) {
    y[i] = std::exp(x[i]);
    denom += y[i];
  }
  for (auto& v : y) v /= denom;
  return y;
}

// Cross-correlation, 6 nested loops.
template <typename S>
Tensor<S> conv2d(const Tensor<S>& x, const Tensor<S>& kernel, const Tensor<S>& bias, int stride,
                 int pad) {
  const int B = x.dim(0), IC = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int OC = kernel.dim(0), kh = kernel.dim(2), kw = kernel.dim(3);
  const int OH = (H + 2 * pad - kh) / stride + 1, OW = (W + 2 * pad - kw) / stride + 1;
  Tensor<S> out({B, OC, OH, OW});
  for (int b = 0; b < B; ++b)
    for (int oc = 0; oc < OC; ++oc)
      for (int oy = 0; oy < OH; ++oy)
        for (int ox = 0; ox < OW; ++ox) {
          S acc = bias.numel() ? bias.at({oc}) : S(0);
          for (int ic = 0; ic < IC; ++ic)
            for (int ky = 0; ky < kh; ++ky)
              for (int kx = 0; kx < kw; ++kx) {
                const int y = oy * stride - pad + ky, xx = ox * stride - pad + kx;
                if (y < 0 || y >= H || xx < 0 || xx >= W) continue;
                acc += x.at({b, ic, y, xx}) * kernel.at({oc, ic, ky, kx});
              }
          out.at({b, oc, oy, ox}) = acc;
        }
  return out;
}

// Grouped convolution with groups == channels (depthwise).
template <typename S>
Tensor<S> dwconv3x3(const Tensor<S>& x, const Tensor<S>& kernel, const Tensor<S>& bias) {
  const int B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  Tensor<S> out(x.shape);
  for (int b = 0; b < B; ++b)
    for (int c = 0; c < C; ++c)
      for (int y = 0; y < H; ++y)
        for (int xx = 0; xx < W; ++xx) {
          S acc = bias.numel() ? bias.at({c}) : S(0);
          for (int ky = 0; ky < 3; ++ky)
            for (int kx = 0; kx < 3; ++kx) {
              const int yy = y - 1 + ky, xw = xx - 1 + kx;
              if (yy < 0 || yy >= H || xw < 0 || xw >= W) continue;
              acc += x.at({b, c, yy, xw}) * kernel.at({c, 0, ky, kx});
            }
          out.at({b, c, y, xx}) = acc;
        }
  return out;
}

template <typename S>
Tensor<S> bilinear_up2(const Tensor<S>& x) {
  const int B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  Tensor<S> out({B, C, 2 * H, 2 * W});
  auto sample = [&](int b, int c, double fy, double fx) {
    const int y0 = std::clamp(static_cast<int>(std::floor(fy)), 0, H - 1);
    const int y1 = std::clamp(static_cast<int>(std::floor(fy)) + 1, 0, H - 1);
    const int x0 = std::clamp(static_cast<int>(std::floor(fx)), 0, W - 1);
    const int x1 = std::clamp(static_cast<int>(std::floor(fx)) + 1, 0, W - 1);
    const double wy = fy - std::floor(fy), wx = fx - std::floor(fx);
    return (1 - wy) * ((1 - wx) * x.at({b, c, y0, x0}) + wx * x.at({b, c, y0, x1})) +
           wy * ((1 - wx) * x.at({b, c, y1, x0}) + wx * x.at({b, c, y1, x1}));
  };
  for (int b = 0; b < B; ++b)
    for (int c = 0; c < C; ++c)
      for (int oy = 0; oy < 2 * H; ++oy)
        for (int ox = 0; ox < 2 * W; ++ox)
          out.at({b, c, oy, ox}) =
              static_cast<S>(sample(b, c, (oy + 0.5) / 2 - 0.5, (ox + 0.5) / 2 - 0.5));
  return out;
}

template <typename S>
Tensor<S> block_mean(const Tensor<S>& x, int th, int tw) {
  const int B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int bh = H / th, bw = W / tw;
  Tensor<S> out({B, C, th, tw});
  for (int b = 0; b < B; ++b)
    for (int c = 0; c < C; ++c)
      for (int oy = 0; oy < th; ++oy)
        for (int ox = 0; ox < tw; ++ox) {
          S acc = S(0);
          for (int yy = 0; yy < bh; ++yy)
            for (int xx = 0; xx < bw; ++xx) acc += x.at({b, c, oy * bh + yy, ox * bw + xx});
          out.at({b, c, oy, ox}) = acc / static_cast<S>(bh * bw);
        }
  return out;
}

// Dense multi-head attention over explicit Q/K/V token tensors [B,T,C] and
// [B,T',C]; optionally negates the scaled logits.
template <typename S>
Tensor<S> attention(const Tensor<S>& q, const Tensor<S>& k, const Tensor<S>& v, int heads,
                    bool negate) {
  const int B = q.dim(0), T = q.dim(1), C = q.dim(2), Tk = k.dim(1);
  const int dh = C / heads;
  const double scale = 1.0 / std::sqrt(double(dh));
  Tensor<S> out({B, T, C});
  for (int b = 0; b < B; ++b)
    for (int h = 0; h < heads; ++h)
      for (int t = 0; t < T; ++t) {
        std::vector<S> logits(static_cast<std::size_t>(Tk));
        for (int u = 0; u < Tk; ++u) {
          double dot = 0;
          for (int d = 0; d < dh; ++d)
            dot += double(q.at({b, t, h * dh + d})) * double(k.at({b, u, h * dh + d}));
          logits[static_cast<std::size_t>(u)] = static_cast<S>((negate ? -dot : dot) * scale);
        }
        std::vector<S> w = softmax_vec(logits);
        for (int d = 0; d < dh; ++d) {
          double acc = 0;
          for (int u = 0; u < Tk; ++u)
            acc += double(w[static_cast<std::size_t>(u)]) * double(v.at({b, u, h * dh + d}));
          out.at({b, t, h * dh + d}) = static_cast<S>(acc);
        }
      }
  return out;
}

// Per-pixel brute-force UDCP: double min over patch and channels.
template <typename S>
Tensor<S> udcp(const Tensor<S>& img, int radius, S ag, S ab, S t_min) {
  const int H = img.dim(1), W = img.dim(2);
  Tensor<S> t({1, H, W});
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      S m = std::numeric_limits<S>::max();
      for (int yy = std::max(0, y - radius); yy <= std::min(H - 1, y + radius); ++yy)
        for (int xx = std::max(0, x - radius); xx <= std::min(W - 1, x + radius); ++xx)
          m = std::min(m, std::min(img.at({1, yy, xx}) / ag, img.at({2, yy, xx}) / ab));
      t.at({0, y, x}) = std::clamp(S(1) - m, t_min, S(1));
    }
  return t;
}

struct MetricSums {
  double abs_rel = 0, sq_rel = 0, sq = 0, log10 = 0;
  long long d1 = 0, d2 = 0, d3 = 0, n = 0;
};

// Scalar-loop metric computation; denom_gt selects the ground-truth
// denominator convention.
template <typename S>
MetricSums metrics(const Tensor<S>& pred, const Tensor<S>& gt, const Tensor<S>& mask,
                   bool denom_gt) {
  MetricSums s;
  for (std::size_t i = 0; i < pred.data.size(); ++i) {
    if (mask.data[i] <= S(0)) continue;
    const double d = pred.data[i], dh = gt.data[i];
    const double denom = denom_gt ? dh : d;
    s.abs_rel += std::abs(d - dh) / denom;
    s.sq_rel += (d - dh) * (d - dh) / denom;
    s.sq += (d - dh) * (d - dh);
    s.log10 += std::abs(std::log10(d) - std::log10(dh));
    const double r = std::max(d / dh, dh / d);
    if (r < 1.25) ++s.d1;
    if (r < 1.5625) ++s.d2;
    if (r < 1.953125) ++s.d3;
    ++s.n;
  }
  return s;
}

// One Adam step on a scalar parameter; returns the new (theta, m, v).
struct AdamScalarState {
  double theta, m = 0, v = 0;
};
inline void adam_scalar_step(AdamScalarState& s, double g, long long t, double lr, double b1,
                             double b2, double eps, double wd) {
  s.theta -= lr * wd * s.theta;
  s.m = b1 * s.m + (1 - b1) * g;
  s.v = b2 * s.v + (1 - b2) * g * g;
  const double mhat = s.m / (1 - std::pow(b1, double(t)));
  const double vhat = s.v / (1 - std::pow(b2, double(t)));
  s.theta -= lr * mhat / (std::sqrt(vhat) + eps);
}

}  // namespace oracle
