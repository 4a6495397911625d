#pragma once

#include <optional>
#include <vector>

#include "umono/ops.hpp"
#include "umono/rng.hpp"

namespace umono {

enum class NormMode { train, eval };

// ---------------------------------------------------------------------------
// parameter holders

template <typename S>
struct LinearParams {
  Tensor<S> weight;  // [in, out]
  Tensor<S> bias;    // [out], empty when absent

  static LinearParams make(int in, int out, bool with_bias) {
    LinearParams p;
    p.weight = Tensor<S>::zeros({in, out});
    if (with_bias) p.bias = Tensor<S>::zeros({out});
    return p;
  }
};

template <typename S>
struct Conv2dParams {
  Tensor<S> kernel;  // [outC, inC, kH, kW]
  Tensor<S> bias;    // [outC], empty when absent
  int stride = 1;
  int pad = 0;

  static Conv2dParams make(int out_c, int in_c, int k, bool with_bias, int stride = 1,
                           int pad = 0) {
    Conv2dParams p;
    p.kernel = Tensor<S>::zeros({out_c, in_c, k, k});
    if (with_bias) p.bias = Tensor<S>::zeros({out_c});
    p.stride = stride;
    p.pad = pad;
    return p;
  }
};

template <typename S>
struct BatchNorm2dState {
  Tensor<S> gamma, beta;              // [C], learnable
  Tensor<S> running_mean, running_var;  // [C], buffers
  S momentum = S(0.1);
  S epsilon = S(1e-5);

  static BatchNorm2dState make(int c) {
    BatchNorm2dState s;
    s.gamma = Tensor<S>::full({c}, S(1));
    s.beta = Tensor<S>::zeros({c});
    s.running_mean = Tensor<S>::zeros({c});
    s.running_var = Tensor<S>::full({c}, S(1));
    return s;
  }
};

template <typename S>
struct LayerNormParams {
  Tensor<S> gamma, beta;  // [C]
  S epsilon = S(1e-5);

  static LayerNormParams make(int c) {
    LayerNormParams p;
    p.gamma = Tensor<S>::full({c}, S(1));
    p.beta = Tensor<S>::zeros({c});
    return p;
  }
};

// ---------------------------------------------------------------------------
// init

template <typename S>
void fill_kaiming_uniform(Tensor<S>& t, std::int64_t fan_in, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  for (auto& v : t.data) v = static_cast<S>(rng.uniform(-bound, bound));
}

template <typename S>
void fill_uniform(Tensor<S>& t, double lo, double hi, Rng& rng) {
  for (auto& v : t.data) v = static_cast<S>(rng.uniform(lo, hi));
}

// ---------------------------------------------------------------------------
// layer ops

// x [..., in] -> [..., out]
template <typename S>
Tensor<S> linear(const Tensor<S>& x, const LinearParams<S>& p) {
  const int in = p.weight.dim(0), out = p.weight.dim(1);
  if (x.dim(x.rank() - 1) != in)
    throw ShapeError("linear: input " + shape_str(x.shape) + " does not match weight " +
                     shape_str(p.weight.shape));
  std::vector<int> out_shape = x.shape;
  out_shape.back() = out;
  const int rows = static_cast<int>(x.numel() / in);
  Tensor<S> y = matmul(reshape(x, {rows, in}), p.weight);
  if (p.bias.numel()) y = add(y, p.bias);
  return reshape(y, out_shape);
}

// [B,C,H,W] <-> [B,H*W,C]
template <typename S>
Tensor<S> grid_to_tokens(const Tensor<S>& x) {
  const int B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  return reshape(permute(x, {0, 2, 3, 1}), {B, H * W, C});
}

template <typename S>
Tensor<S> tokens_to_grid(const Tensor<S>& t, int h, int w) {
  const int B = t.dim(0), C = t.dim(2);
  return permute(reshape(t, {B, h, w, C}), {0, 3, 1, 2});
}

template <typename S>
Tensor<S> conv2d(const Tensor<S>& x, const Conv2dParams<S>& p) {
  const int OC = p.kernel.dim(0), IC = p.kernel.dim(1);
  const int kh = p.kernel.dim(2), kw = p.kernel.dim(3);
  if (x.rank() != 4 || x.dim(1) != IC)
    throw ShapeError("conv2d: input channels of " + shape_str(x.shape) +
                     " do not match kernel " + shape_str(p.kernel.shape));
  const int B = x.dim(0), H = x.dim(2), W = x.dim(3);
  const int OH = (H + 2 * p.pad - kh) / p.stride + 1;
  const int OW = (W + 2 * p.pad - kw) / p.stride + 1;
  Tensor<S> cols = im2col(x, kh, kw, p.stride, p.stride, p.pad, p.pad);  // [B,T,K]
  const int K = IC * kh * kw, T = OH * OW;
  Tensor<S> wmat = transpose(reshape(p.kernel, {OC, K}));  // [K,OC]
  Tensor<S> y = matmul(reshape(cols, {B * T, K}), wmat);
  if (p.bias.numel()) y = add(y, p.bias);
  return tokens_to_grid(reshape(y, {B, T, OC}), OH, OW);
}

// 3x3 depthwise, stride 1, same padding; kernel [C,1,3,3].
template <typename S>
Tensor<S> dwconv3x3(const Tensor<S>& x, const Conv2dParams<S>& p) {
  Tensor<S> y = depthwise3x3(x, p.kernel);
  if (p.bias.numel()) y = add(y, reshape(p.bias, {1, p.bias.dim(0), 1, 1}));
  return y;
}

// 1x1 pointwise convolution as a channel projection.
template <typename S>
Tensor<S> pwconv1x1(const Tensor<S>& x, const LinearParams<S>& p) {
  if (x.dim(1) != p.weight.dim(0))
    throw ShapeError("pwconv1x1: input channels of " + shape_str(x.shape) +
                     " do not match weight " + shape_str(p.weight.shape));
  const int H = x.dim(2), W = x.dim(3);
  return tokens_to_grid(linear(grid_to_tokens(x), p), H, W);
}

template <typename S>
Tensor<S> batchnorm2d(const Tensor<S>& x, BatchNorm2dState<S>& s, NormMode mode) {
  if (x.rank() != 4 || x.dim(1) != s.gamma.dim(0))
    throw ShapeError("batchnorm2d: input " + shape_str(x.shape) + " does not match " +
                     std::to_string(s.gamma.dim(0)) + " channels");
  const int B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::int64_t n = std::int64_t(B) * H * W;
  Tensor<S> xhat;
  if (mode == NormMode::train) {
    Tensor<S> mean = mul_scalar(sum_axes(x, {0, 2, 3}, true), S(1) / static_cast<S>(n));
    Tensor<S> xc = sub(x, mean);
    Tensor<S> var = mul_scalar(sum_axes(mul(xc, xc), {0, 2, 3}, true), S(1) / static_cast<S>(n));
    xhat = mul(xc, pow_scalar(add_scalar(var, s.epsilon), S(-0.5)));
    // running statistics track the batch values (unbiased variance), outside
    // the tape
    const S unbias = n > 1 ? static_cast<S>(n) / static_cast<S>(n - 1) : S(1);
    for (int c = 0; c < C; ++c) {
      s.running_mean.data[static_cast<std::size_t>(c)] =
          (S(1) - s.momentum) * s.running_mean.data[static_cast<std::size_t>(c)] +
          s.momentum * mean.data[static_cast<std::size_t>(c)];
      s.running_var.data[static_cast<std::size_t>(c)] =
          (S(1) - s.momentum) * s.running_var.data[static_cast<std::size_t>(c)] +
          s.momentum * var.data[static_cast<std::size_t>(c)] * unbias;
    }
  } else {
    Tensor<S> rm = reshape(s.running_mean.detached(), {1, C, 1, 1});
    Tensor<S> rv = reshape(s.running_var.detached(), {1, C, 1, 1});
    xhat = mul(sub(x, rm), pow_scalar(add_scalar(rv, s.epsilon), S(-0.5)));
  }
  Tensor<S> g4 = reshape(s.gamma, {1, C, 1, 1});
  Tensor<S> b4 = reshape(s.beta, {1, C, 1, 1});
  return add(mul(xhat, g4), b4);
}

// Per-position normalization over the trailing (channel) axis.
template <typename S>
Tensor<S> layernorm(const Tensor<S>& x, const LayerNormParams<S>& p) {
  const int C = x.dim(x.rank() - 1);
  if (C != p.gamma.dim(0))
    throw ShapeError("layernorm: trailing axis of " + shape_str(x.shape) + " does not match " +
                     std::to_string(p.gamma.dim(0)) + " channels");
  Tensor<S> mean = mul_scalar(sum_axes(x, {-1}, true), S(1) / static_cast<S>(C));
  Tensor<S> xc = sub(x, mean);
  Tensor<S> var = mul_scalar(sum_axes(mul(xc, xc), {-1}, true), S(1) / static_cast<S>(C));
  Tensor<S> xhat = mul(xc, pow_scalar(add_scalar(var, p.epsilon), S(-0.5)));
  return add(mul(xhat, p.gamma), p.beta);
}

// Non-overlapping 4x4 patch projection: [B,3,H,W] -> [B,C,H/4,W/4].
// Projection input layout is c*16 + ky*4 + kx.
template <typename S>
Tensor<S> patch_embed(const Tensor<S>& x, const LinearParams<S>& p) {
  if (x.rank() != 4) throw ShapeError("patch_embed: expects [B,C,H,W], got " + shape_str(x.shape));
  const int H = x.dim(2), W = x.dim(3);
  if (H % 4 != 0 || W % 4 != 0)
    throw ShapeError("patch_embed: extents of " + shape_str(x.shape) + " not divisible by 4");
  if (p.weight.dim(0) != x.dim(1) * 16)
    throw ShapeError("patch_embed: weight " + shape_str(p.weight.shape) + " does not match input " +
                     shape_str(x.shape));
  Tensor<S> cols = im2col(x, 4, 4, 4, 4, 0, 0);  // [B, T, 16*C]
  return tokens_to_grid(linear(cols, p), H / 4, W / 4);
}

// 2x2 neighborhood concat (4C channels, layout c*4 + ky*2 + kx) projected to
// the next stage width: [B,C,H,W] -> [B,C',H/2,W/2].
template <typename S>
Tensor<S> patch_merge(const Tensor<S>& x, const LinearParams<S>& p) {
  if (x.rank() != 4) throw ShapeError("patch_merge: expects [B,C,H,W], got " + shape_str(x.shape));
  const int H = x.dim(2), W = x.dim(3);
  if (H % 2 != 0 || W % 2 != 0)
    throw ShapeError("patch_merge: extents of " + shape_str(x.shape) + " not even");
  if (p.weight.dim(0) != x.dim(1) * 4)
    throw ShapeError("patch_merge: weight " + shape_str(p.weight.shape) + " does not match input " +
                     shape_str(x.shape));
  Tensor<S> cols = im2col(x, 2, 2, 2, 2, 0, 0);  // [B, T, 4*C]
  return tokens_to_grid(linear(cols, p), H / 2, W / 2);
}

}  // namespace umono
