#pragma once

#include <set>
#include <string>
#include <vector>

#include "umono/config.hpp"
#include "umono/decoder.hpp"
#include "umono/encoder.hpp"
#include "umono/rng.hpp"

namespace umono {

enum class ParamKind { conv_kernel, linear_weight, bias, gamma, beta, running_mean, running_var };

template <typename S>
struct ParamEntry {
  std::string name;
  Tensor<S>* tensor;
  bool trainable;
};

// Named, ordered view over every parameter and buffer tensor of a model.
template <typename S>
class ParamStore {
 public:
  void add(std::string name, Tensor<S>& t, bool trainable) {
    if (!names_.insert(name).second) throw Error("duplicate parameter name: " + name);
    entries_.push_back(ParamEntry<S>{std::move(name), &t, trainable});
  }

  const std::vector<ParamEntry<S>>& entries() const { return entries_; }
  std::vector<ParamEntry<S>>& entries() { return entries_; }

  Tensor<S>* find(const std::string& name) {
    for (auto& e : entries_)
      if (e.name == name) return e.tensor;
    return nullptr;
  }

  std::size_t trainable_count() const {
    std::size_t n = 0;
    for (const auto& e : entries_)
      if (e.trainable) ++n;
    return n;
  }

  std::int64_t total_elements() const {
    std::int64_t n = 0;
    for (const auto& e : entries_)
      if (e.trainable) n += e.tensor->numel();
    return n;
  }

 private:
  std::vector<ParamEntry<S>> entries_;
  std::set<std::string> names_;
};

// The full network: hybrid encoder plus transmission-guided decoder, with a
// flat named parameter registry for the optimizer and checkpoints.
template <typename S>
class UMonoModel {
 public:
  UMonoModel(const EncoderConfig& ec, const DecoderConfig& dc) : ecfg_(ec), dcfg_(dc) {
    enc_ = EncoderParams<S>::make(ecfg_);
    dec_ = DecoderParams<S>::make(dcfg_, ecfg_);
    visit_params([this](const std::string& name, Tensor<S>& t, ParamKind kind, std::int64_t) {
      const bool buffer = kind == ParamKind::running_mean || kind == ParamKind::running_var;
      store_.add(name, t, !buffer);
    });
  }
  UMonoModel(const UMonoModel&) = delete;
  UMonoModel& operator=(const UMonoModel&) = delete;

  static UMonoModel from_config(const RunConfig& cfg) {
    return UMonoModel(cfg.encoder_config(), cfg.decoder_config());
  }

  void init_params(std::uint64_t seed) {
    Rng rng(seed);
    visit_params([&rng](const std::string&, Tensor<S>& t, ParamKind kind, std::int64_t fan_in) {
      switch (kind) {
        case ParamKind::conv_kernel:
        case ParamKind::linear_weight:
          fill_kaiming_uniform(t, fan_in, rng);
          break;
        case ParamKind::bias:
        case ParamKind::beta:
        case ParamKind::running_mean:
          for (auto& v : t.data) v = S(0);
          break;
        case ParamKind::gamma:
        case ParamKind::running_var:
          for (auto& v : t.data) v = S(1);
          break;
      }
    });
  }

  // g == nullptr runs untaped (inference). Train-mode batchnorm mutates
  // running statistics.
  Tensor<S> forward(Graph<S>* g, const Tensor<S>& rgb, const Tensor<S>& transmission,
                    NormMode mode) {
    if (g)
      for (auto& e : store_.entries())
        if (e.trainable) g->watch(*e.tensor);
    HierarchicalFeatures<S> feats = encode(rgb, enc_, ecfg_, mode);
    return decode(feats, transmission, dec_, dcfg_, mode);
  }

  HierarchicalFeatures<S> encode_only(const Tensor<S>& rgb, NormMode mode) {
    return encode(rgb, enc_, ecfg_, mode);
  }

  ParamStore<S>& params() { return store_; }
  const EncoderConfig& encoder_config() const { return ecfg_; }
  const DecoderConfig& decoder_config() const { return dcfg_; }
  EncoderParams<S>& encoder_params() { return enc_; }
  DecoderParams<S>& decoder_params() { return dec_; }

  // Walks every parameter/buffer tensor in a fixed order; the visitor gets
  // (name, tensor, kind, fan_in).
  template <typename V>
  void visit_params(V&& v) {
    for (int i = 0; i < 4; ++i) {
      auto& st = enc_.stages[static_cast<std::size_t>(i)];
      const std::string sp = "enc.s" + std::to_string(i + 1) + ".";
      const std::string down = i == 0 ? "embed" : "merge";
      visit_linear(v, sp + down, st.downsample);
      for (std::size_t j = 0; j < st.blocks.size(); ++j) {
        const std::string bp = sp + "b" + std::to_string(j) + ".";
        auto& blk = st.blocks[j];
        if (blk.cnn.dw.kernel.numel()) {
          v(bp + "cnn.dw.k", blk.cnn.dw.kernel, ParamKind::conv_kernel, std::int64_t(9));
          visit_bn(v, bp + "cnn.bn", blk.cnn.bn);
          visit_linear(v, bp + "cnn.pw", blk.cnn.pw);
        }
        if (blk.sra.wq.weight.numel()) {
          visit_linear(v, bp + "attn.wq", blk.sra.wq);
          visit_linear(v, bp + "attn.wk", blk.sra.wk);
          visit_linear(v, bp + "attn.wv", blk.sra.wv);
          visit_linear(v, bp + "attn.wg", blk.sra.wg);
          if (blk.sra.reduce.weight.numel()) visit_linear(v, bp + "attn.red", blk.sra.reduce);
        }
        if (blk.lgff.conv1.kernel.numel()) {
          visit_conv(v, bp + "lgff.c1", blk.lgff.conv1);
          visit_bn(v, bp + "lgff.bn", blk.lgff.bn);
          visit_conv(v, bp + "lgff.c2", blk.lgff.conv2);
        }
      }
    }
    visit_conv(v, "dec.seed", dec_.seed);
    for (int s = 0; s < 4; ++s) {
      auto& sp = dec_.stages[static_cast<std::size_t>(s)];
      const std::string pre = "dec.s" + std::to_string(4 - s) + ".";
      if (sp.udia.wq.weight.numel()) {
        visit_linear(v, pre + "udia.wq", sp.udia.wq);
        visit_linear(v, pre + "udia.wk", sp.udia.wk);
        visit_linear(v, pre + "udia.wv", sp.udia.wv);
        if (sp.udia.norm == NormKind::layer) {
          v(pre + "udia.ln.gamma", sp.udia.ln.gamma, ParamKind::gamma, 0);
          v(pre + "udia.ln.beta", sp.udia.ln.beta, ParamKind::beta, 0);
        } else {
          visit_bn(v, pre + "udia.bn", sp.udia.bn);
        }
      }
      if (sp.mtm_proj.weight.numel()) visit_linear(v, pre + "mtm", sp.mtm_proj);
      visit_conv(v, pre + "conv", sp.conv);
      visit_bn(v, pre + "bn", sp.bn);
    }
    visit_conv(v, "dec.head", dec_.head);
  }

 private:
  template <typename V>
  static void visit_linear(V& v, const std::string& name, LinearParams<S>& p) {
    v(name + ".w", p.weight, ParamKind::linear_weight, std::int64_t(p.weight.dim(0)));
    if (p.bias.numel()) v(name + ".b", p.bias, ParamKind::bias, 0);
  }
  template <typename V>
  static void visit_conv(V& v, const std::string& name, Conv2dParams<S>& p) {
    const std::int64_t fan_in =
        std::int64_t(p.kernel.dim(1)) * p.kernel.dim(2) * p.kernel.dim(3);
    v(name + ".k", p.kernel, ParamKind::conv_kernel, fan_in);
    if (p.bias.numel()) v(name + ".b", p.bias, ParamKind::bias, 0);
  }
  template <typename V>
  static void visit_bn(V& v, const std::string& name, BatchNorm2dState<S>& p) {
    v(name + ".gamma", p.gamma, ParamKind::gamma, 0);
    v(name + ".beta", p.beta, ParamKind::beta, 0);
    v(name + ".rmean", p.running_mean, ParamKind::running_mean, 0);
    v(name + ".rvar", p.running_var, ParamKind::running_var, 0);
  }

  EncoderConfig ecfg_;
  DecoderConfig dcfg_;
  EncoderParams<S> enc_;
  DecoderParams<S> dec_;
  ParamStore<S> store_;
};

}  // namespace umono
