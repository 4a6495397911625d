#pragma once

#include <array>
#include <string>
#include <vector>

#include "umono/layers.hpp"

namespace umono {

enum class EncoderAblation { full, cnn_only, transformer_only, fuse_add };

struct EncoderConfig {
  std::array<int, 4> depths{3, 4, 6, 3};
  std::array<int, 4> channels{64, 128, 256, 512};
  std::array<int, 4> heads{1, 2, 4, 8};
  std::array<int, 4> reduction{8, 4, 2, 1};
  EncoderAblation ablation = EncoderAblation::full;

  void validate() const {
    for (int i = 0; i < 4; ++i) {
      if (depths[i] < 1 || channels[i] < 1 || heads[i] < 1 || reduction[i] < 1)
        throw ConfigError("encoder: depths/channels/heads/reduction must be positive");
      if (channels[i] % heads[i] != 0)
        throw ConfigError("encoder: channels[" + std::to_string(i) + "]=" +
                          std::to_string(channels[i]) + " not divisible by heads=" +
                          std::to_string(heads[i]));
    }
  }
};

// ---------------------------------------------------------------------------
// CNN branch: X + PWConv(BN(DWConv(X)))

template <typename S>
struct CnnBlockParams {
  Conv2dParams<S> dw;        // [C,1,3,3], no bias (BN follows)
  BatchNorm2dState<S> bn;
  LinearParams<S> pw;        // C -> C, bias

  static CnnBlockParams make(int c) {
    CnnBlockParams p;
    p.dw = Conv2dParams<S>::make(c, 1, 3, false, 1, 1);
    p.bn = BatchNorm2dState<S>::make(c);
    p.pw = LinearParams<S>::make(c, c, true);
    return p;
  }
};

template <typename S>
Tensor<S> cnn_block(const Tensor<S>& x, CnnBlockParams<S>& p, NormMode mode) {
  if (x.dim(1) != p.dw.kernel.dim(0))
    throw ShapeError("cnn_block: input " + shape_str(x.shape) + " does not match " +
                     std::to_string(p.dw.kernel.dim(0)) + " channels");
  return add(x, pwconv1x1(batchnorm2d(dwconv3x3(x, p.dw), p.bn, mode), p.pw));
}

// ---------------------------------------------------------------------------
// Transformer branch: spatial-reduction multi-head self-attention

template <typename S>
struct SraParams {
  LinearParams<S> wq, wk, wv, wg;  // C -> C, no bias
  LinearParams<S> reduce;          // R^2*C -> C, bias; only present when R > 1
  int heads = 1;
  int reduction = 1;

  static SraParams make(int c, int heads, int reduction) {
    SraParams p;
    p.wq = LinearParams<S>::make(c, c, false);
    p.wk = LinearParams<S>::make(c, c, false);
    p.wv = LinearParams<S>::make(c, c, false);
    p.wg = LinearParams<S>::make(c, c, false);
    if (reduction > 1) p.reduce = LinearParams<S>::make(reduction * reduction * c, c, true);
    p.heads = heads;
    p.reduction = reduction;
    return p;
  }
};

// [B,T,C] -> [B*h, T, C/h]
template <typename S>
Tensor<S> split_heads(const Tensor<S>& t, int h) {
  const int B = t.dim(0), T = t.dim(1), C = t.dim(2);
  return reshape(permute(reshape(t, {B, T, h, C / h}), {0, 2, 1, 3}), {B * h, T, C / h});
}

template <typename S>
Tensor<S> join_heads(const Tensor<S>& t, int batch) {
  const int Bh = t.dim(0), T = t.dim(1), dh = t.dim(2);
  const int h = Bh / batch;
  return reshape(permute(reshape(t, {batch, h, T, dh}), {0, 2, 1, 3}), {batch, T, h * dh});
}

// Multi-head attention over tokens; keys/values are spatially reduced by
// merging non-overlapping RxR token blocks and projecting back to C. With
// R=1 the reduction disappears and this is dense self-attention.
template <typename S>
Tensor<S> sra_attention(const Tensor<S>& tokens, int grid_h, int grid_w, SraParams<S>& p) {
  const int B = tokens.dim(0), T = tokens.dim(1), C = tokens.dim(2);
  const int R = p.reduction, h = p.heads;
  if (T != grid_h * grid_w)
    throw ShapeError("sra_attention: token count " + std::to_string(T) + " does not match grid " +
                     std::to_string(grid_h) + "x" + std::to_string(grid_w));
  if (grid_h % R != 0 || grid_w % R != 0)
    throw ShapeError("sra_attention: grid " + std::to_string(grid_h) + "x" +
                     std::to_string(grid_w) + " not divisible by reduction " + std::to_string(R));
  if (C % h != 0) throw ShapeError("sra_attention: channels not divisible by heads");
  Tensor<S> q = linear(tokens, p.wq);
  Tensor<S> kv_src = tokens;
  if (R > 1) {
    Tensor<S> grid = tokens_to_grid(tokens, grid_h, grid_w);
    Tensor<S> blocks = im2col(grid, R, R, R, R, 0, 0);  // [B, T/R^2, R^2*C]
    kv_src = linear(blocks, p.reduce);                  // [B, T/R^2, C]
  }
  Tensor<S> k = linear(kv_src, p.wk);
  Tensor<S> v = linear(kv_src, p.wv);
  const S scale = S(1) / static_cast<S>(std::sqrt(double(C) / h));
  Tensor<S> qs = split_heads(q, h), ks = split_heads(k, h), vs = split_heads(v, h);
  Tensor<S> logits = mul_scalar(bmm(qs, permute(ks, {0, 2, 1})), scale);
  Tensor<S> attn = softmax(logits, -1);
  Tensor<S> ctx = join_heads(bmm(attn, vs), B);
  return linear(ctx, p.wg);
}

// ---------------------------------------------------------------------------
// LGFF: learned per-pixel convex combination of the two branches

template <typename S>
struct LgffParams {
  Conv2dParams<S> conv1;  // 2C -> C, 3x3 same, no bias (BN follows)
  BatchNorm2dState<S> bn;
  Conv2dParams<S> conv2;  // C -> 1, 3x3 same, bias

  static LgffParams make(int c) {
    LgffParams p;
    p.conv1 = Conv2dParams<S>::make(c, 2 * c, 3, false, 1, 1);
    p.bn = BatchNorm2dState<S>::make(c);
    p.conv2 = Conv2dParams<S>::make(1, c, 3, true, 1, 1);
    return p;
  }
};

// Weight map in (0,1), [B,1,H,W].
template <typename S>
Tensor<S> lgff_gate(const Tensor<S>& f_local, const Tensor<S>& f_global, LgffParams<S>& p,
                    NormMode mode) {
  Tensor<S> cat = concat<S>({f_local, f_global}, 1);
  Tensor<S> hidden = relu(batchnorm2d(conv2d(cat, p.conv1), p.bn, mode));
  return sigmoid(conv2d(hidden, p.conv2));
}

// F_L*W + F_G*(1-W), computed as F_G + W*(F_L - F_G) so the result stays in
// the elementwise [min,max] envelope of the inputs under rounding.
template <typename S>
Tensor<S> lgff_blend(const Tensor<S>& f_local, const Tensor<S>& f_global, const Tensor<S>& w) {
  if (!f_local.same_shape(f_global))
    throw ShapeError("lgff_blend: branch shapes " + shape_str(f_local.shape) + " vs " +
                     shape_str(f_global.shape));
  return add(f_global, mul(sub(f_local, f_global), w));
}

template <typename S>
Tensor<S> lgff_fuse(const Tensor<S>& f_local, const Tensor<S>& f_global, LgffParams<S>& p,
                    NormMode mode) {
  return lgff_blend(f_local, f_global, lgff_gate(f_local, f_global, p, mode));
}

// ---------------------------------------------------------------------------
// UDFE block

template <typename S>
struct UdfeParams {
  CnnBlockParams<S> cnn;
  SraParams<S> sra;
  LgffParams<S> lgff;

  static UdfeParams make(int c, int heads, int reduction, EncoderAblation ab) {
    UdfeParams p;
    if (ab != EncoderAblation::transformer_only) p.cnn = CnnBlockParams<S>::make(c);
    if (ab != EncoderAblation::cnn_only) p.sra = SraParams<S>::make(c, heads, reduction);
    if (ab == EncoderAblation::full) p.lgff = LgffParams<S>::make(c);
    return p;
  }
};

template <typename S>
Tensor<S> udfe_block(const Tensor<S>& x, UdfeParams<S>& p, EncoderAblation ab, NormMode mode) {
  const int H = x.dim(2), W = x.dim(3);
  if (ab == EncoderAblation::cnn_only) return cnn_block(x, p.cnn, mode);
  auto global_branch = [&]() {
    return tokens_to_grid(sra_attention(grid_to_tokens(x), H, W, p.sra), H, W);
  };
  if (ab == EncoderAblation::transformer_only) return global_branch();
  Tensor<S> f_l = cnn_block(x, p.cnn, mode);
  Tensor<S> f_g = global_branch();
  if (ab == EncoderAblation::fuse_add) return add(f_l, f_g);
  return lgff_fuse(f_l, f_g, p.lgff, mode);
}

// ---------------------------------------------------------------------------
// four-stage encoder

template <typename S>
struct EncoderStageParams {
  LinearParams<S> downsample;  // patch embed (stage 1) or patch merge (2..4)
  std::vector<UdfeParams<S>> blocks;
};

template <typename S>
struct EncoderParams {
  std::array<EncoderStageParams<S>, 4> stages;

  static EncoderParams make(const EncoderConfig& cfg, int in_channels = 3) {
    cfg.validate();
    EncoderParams p;
    int prev = in_channels;
    for (int i = 0; i < 4; ++i) {
      const int c = cfg.channels[static_cast<std::size_t>(i)];
      const int patch = i == 0 ? 16 : 4;
      p.stages[static_cast<std::size_t>(i)].downsample =
          LinearParams<S>::make(patch * prev, c, true);
      for (int j = 0; j < cfg.depths[static_cast<std::size_t>(i)]; ++j)
        p.stages[static_cast<std::size_t>(i)].blocks.push_back(
            UdfeParams<S>::make(c, cfg.heads[static_cast<std::size_t>(i)],
                                cfg.reduction[static_cast<std::size_t>(i)], cfg.ablation));
      prev = c;
    }
    return p;
  }
};

template <typename S>
struct HierarchicalFeatures {
  std::array<Tensor<S>, 4> e;  // scales 1/4, 1/8, 1/16, 1/32
};

template <typename S>
HierarchicalFeatures<S> encode(const Tensor<S>& image, EncoderParams<S>& p,
                               const EncoderConfig& cfg, NormMode mode) {
  if (image.rank() != 4) throw ShapeError("encode: expects [B,3,H,W], got " + shape_str(image.shape));
  const int H = image.dim(2), W = image.dim(3);
  if (H % 32 != 0 || W % 32 != 0)
    throw ShapeError("encode: input extents " + shape_str(image.shape) +
                     " must be divisible by 32");
  HierarchicalFeatures<S> out;
  Tensor<S> x = image;
  for (int i = 0; i < 4; ++i) {
    auto& stage = p.stages[static_cast<std::size_t>(i)];
    x = i == 0 ? patch_embed(x, stage.downsample) : patch_merge(x, stage.downsample);
    for (auto& blk : stage.blocks) x = udfe_block(x, blk, cfg.ablation, mode);
    out.e[static_cast<std::size_t>(i)] = x;
  }
  return out;
}

}  // namespace umono
