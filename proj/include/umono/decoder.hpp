#pragma once

#include <array>
#include <string>
#include <vector>

#include "umono/encoder.hpp"
#include "umono/layers.hpp"

namespace umono {

enum class GuidanceMode { udia, none, hef, mtm };
enum class NormKind { layer, batch };

struct DecoderConfig {
  std::array<int, 4> widths{256, 128, 64, 32};  // D widths for stages 4,3,2,1
  int heads = 1;
  GuidanceMode guidance = GuidanceMode::udia;
  NormKind norm = NormKind::layer;

  void validate(const EncoderConfig& enc) const {
    for (int w : widths)
      if (w < 1) throw ConfigError("decoder: widths must be positive");
    if (heads < 1) throw ConfigError("decoder: heads must be positive");
    for (int i = 0; i < 4; ++i)
      if (enc.channels[static_cast<std::size_t>(i)] % heads != 0)
        throw ConfigError("decoder: encoder channels not divisible by UDIA heads");
  }
};

// T-bar = 1 - T
template <typename S>
Tensor<S> invert_transmission(const Tensor<S>& t) {
  return add_scalar(mul_scalar(t, S(-1)), S(1));
}

// ---------------------------------------------------------------------------
// UDIA: cross attention with negated logits; queries come from the inverted
// transmission map, keys/values from the encoded feature.

template <typename S>
struct UdiaParams {
  LinearParams<S> wq;  // 1 -> C, no bias
  LinearParams<S> wk, wv;  // C -> C, no bias
  LayerNormParams<S> ln;
  BatchNorm2dState<S> bn;  // used instead of ln when NormKind::batch
  int heads = 1;
  NormKind norm = NormKind::layer;

  static UdiaParams make(int c, int heads, NormKind norm) {
    UdiaParams p;
    p.wq = LinearParams<S>::make(1, c, false);
    p.wk = LinearParams<S>::make(c, c, false);
    p.wv = LinearParams<S>::make(c, c, false);
    if (norm == NormKind::layer)
      p.ln = LayerNormParams<S>::make(c);
    else
      p.bn = BatchNorm2dState<S>::make(c);
    p.heads = heads;
    p.norm = norm;
    return p;
  }
};

// Attention weights per query row from negated scaled logits. Exposed for
// tests; `enhanced` below is the module output.
template <typename S>
Tensor<S> udia_attention_weights(const Tensor<S>& q, const Tensor<S>& k, int heads) {
  const S scale = S(1) / static_cast<S>(std::sqrt(double(q.dim(2)) / heads));
  Tensor<S> qs = split_heads(q, heads), ks = split_heads(k, heads);
  Tensor<S> logits = mul_scalar(bmm(qs, permute(ks, {0, 2, 1})), -scale);
  return softmax(logits, -1);
}

// e_tokens [B,T,C], tbar_tokens [B,T,1] -> F [B,T,C]
// F = E + Norm(Softmax(-Q K^T / sqrt(d_head)) V)
template <typename S>
Tensor<S> udia_aggregate(const Tensor<S>& e_tokens, const Tensor<S>& tbar_tokens,
                         UdiaParams<S>& p, NormMode mode, int grid_h = 0, int grid_w = 0) {
  const int B = e_tokens.dim(0), T = e_tokens.dim(1), C = e_tokens.dim(2);
  if (tbar_tokens.rank() != 3 || tbar_tokens.dim(0) != B || tbar_tokens.dim(1) != T ||
      tbar_tokens.dim(2) != 1)
    throw ShapeError("udia: guidance tokens " + shape_str(tbar_tokens.shape) +
                     " do not match features " + shape_str(e_tokens.shape));
  Tensor<S> q = linear(tbar_tokens, p.wq);
  Tensor<S> k = linear(e_tokens, p.wk);
  Tensor<S> v = linear(e_tokens, p.wv);
  Tensor<S> attn = udia_attention_weights(q, k, p.heads);
  Tensor<S> ctx = join_heads(bmm(attn, split_heads(v, p.heads)), B);
  Tensor<S> normed;
  if (p.norm == NormKind::layer) {
    normed = layernorm(ctx, p.ln);
  } else {
    normed = grid_to_tokens(batchnorm2d(tokens_to_grid(ctx, grid_h, grid_w), p.bn, mode));
  }
  return add(e_tokens, normed);
}

// ---------------------------------------------------------------------------
// decode stages

template <typename S>
struct DecodeStageParams {
  UdiaParams<S> udia;       // guidance == udia
  LinearParams<S> mtm_proj;  // guidance == mtm: 1 -> C projection of T-bar
  Conv2dParams<S> conv;      // 3x3 same, no bias (BN follows)
  BatchNorm2dState<S> bn;
};

template <typename S>
struct DecoderParams {
  Conv2dParams<S> seed;  // 1x1, C4 -> widths[0]
  std::array<DecodeStageParams<S>, 4> stages;  // index 0 = stage 4 ... 3 = stage 1
  Conv2dParams<S> head;  // 1x1, widths[3] -> 1

  static DecoderParams make(const DecoderConfig& cfg, const EncoderConfig& enc) {
    cfg.validate(enc);
    DecoderParams p;
    p.seed = Conv2dParams<S>::make(cfg.widths[0], enc.channels[3], 1, true);
    for (int s = 0; s < 4; ++s) {
      const int stage = 4 - s;  // 4,3,2,1
      const int ec = enc.channels[static_cast<std::size_t>(stage - 1)];
      const int d_in = cfg.widths[static_cast<std::size_t>(s)];
      const int d_out = cfg.widths[static_cast<std::size_t>(std::min(s + 1, 3))];
      auto& sp = p.stages[static_cast<std::size_t>(s)];
      if (cfg.guidance == GuidanceMode::udia)
        sp.udia = UdiaParams<S>::make(ec, cfg.heads, cfg.norm);
      if (cfg.guidance == GuidanceMode::mtm) sp.mtm_proj = LinearParams<S>::make(1, ec, true);
      const int conv_in = cfg.guidance == GuidanceMode::none ? d_in : ec + d_in;
      sp.conv = Conv2dParams<S>::make(d_out, conv_in, 3, false, 1, 1);
      sp.bn = BatchNorm2dState<S>::make(d_out);
    }
    p.head = Conv2dParams<S>::make(1, cfg.widths[3], 1, true);
    return p;
  }
};

// One decode step: conv-bn-relu over Concat(F_i, D_i), then 2x upsample.
// The final stage (stage 1) skips the upsample so the head input stays at
// 1/4 scale.
template <typename S>
Tensor<S> decode_stage(const Tensor<S>& guidance, const Tensor<S>& d,
                       DecodeStageParams<S>& p, NormMode mode, bool upsample = true) {
  Tensor<S> x;
  if (guidance.numel() == 0) {
    x = d;
  } else {
    if (guidance.dim(2) != d.dim(2) || guidance.dim(3) != d.dim(3))
      throw ShapeError("decode_stage: guidance " + shape_str(guidance.shape) +
                       " and decode feature " + shape_str(d.shape) + " differ spatially");
    x = concat<S>({guidance, d}, 1);
  }
  Tensor<S> y = relu(batchnorm2d(conv2d(x, p.conv), p.bn, mode));
  return upsample ? bilinear_upsample2x(y) : y;
}

// 1x1 conv -> sigmoid -> two 2x upsamples; input at 1/4 scale, output
// full-resolution depth strictly inside (0,1).
template <typename S>
Tensor<S> predict_depth(const Tensor<S>& d_quarter, const Conv2dParams<S>& head) {
  Tensor<S> logits = conv2d(d_quarter, head);
  return bilinear_upsample2x(bilinear_upsample2x(sigmoid(logits)));
}

// Full decode pass. `transmission` is the full-resolution map [B,1,H,W];
// each stage pools it to the stage grid and inverts it.
template <typename S>
Tensor<S> decode(const HierarchicalFeatures<S>& features, const Tensor<S>& transmission,
                 DecoderParams<S>& p, const DecoderConfig& cfg, NormMode mode) {
  Tensor<S> d = conv2d(features.e[3], p.seed);
  for (int s = 0; s < 4; ++s) {
    const int stage_idx = 3 - s;  // features index for stages 4,3,2,1
    const Tensor<S>& e = features.e[static_cast<std::size_t>(stage_idx)];
    const int gh = e.dim(2), gw = e.dim(3);
    auto& sp = p.stages[static_cast<std::size_t>(s)];
    Tensor<S> guidance;  // empty = none
    if (cfg.guidance != GuidanceMode::none) {
      Tensor<S> tbar = invert_transmission(avgpool_to(transmission, gh, gw));
      switch (cfg.guidance) {
        case GuidanceMode::udia: {
          Tensor<S> tokens = udia_aggregate(grid_to_tokens(e), grid_to_tokens(tbar), sp.udia,
                                            mode, gh, gw);
          guidance = tokens_to_grid(tokens, gh, gw);
          break;
        }
        case GuidanceMode::hef:
          guidance = e;
          break;
        case GuidanceMode::mtm:
          guidance = tokens_to_grid(linear(grid_to_tokens(tbar), sp.mtm_proj), gh, gw);
          break;
        case GuidanceMode::none:
          break;
      }
    }
    d = decode_stage(guidance, d, sp, mode, /*upsample=*/s < 3);
  }
  return predict_depth(d, p.head);
}

}  // namespace umono
