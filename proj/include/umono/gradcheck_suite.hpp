#pragma once

#include <string>
#include <vector>

#include "umono/decoder.hpp"
#include "umono/encoder.hpp"
#include "umono/gradcheck.hpp"
#include "umono/model.hpp"
#include "umono/objective.hpp"

// Canned finite-difference sweeps over every layer and composite, used by the
// gradcheck CLI command and the acceptance suite. All checks compare the tape
// gradient against central differences and report the max relative error.
namespace umono {

struct GradCheckResult {
  std::string name;
  double max_err = 0;
  double tol = 0;
  int trials = 0;
  bool pass() const { return max_err < tol; }
};

namespace gradcheck_detail {

template <typename S>
Tensor<S> rand_t(std::vector<int> shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor<S> t(std::move(shape));
  for (auto& v : t.data) v = static_cast<S>(rng.uniform(lo, hi));
  return t;
}

template <typename S>
constexpr S fd_step() {
  return sizeof(S) == 8 ? S(1e-5) : S(1e-2);
}
template <typename S>
constexpr double layer_tol() {
  return sizeof(S) == 8 ? 1e-5 : 1e-3;
}
template <typename S>
constexpr double composite_tol() {
  return sizeof(S) == 8 ? 1e-4 : 1e-3;
}

}  // namespace gradcheck_detail

// Elementary ops and single layers (tolerance 1e-5 at 64-bit).
template <typename S>
std::vector<GradCheckResult> gradcheck_layers(int trials, std::uint64_t seed) {
  using namespace gradcheck_detail;
  using T = Tensor<S>;
  Rng rng(seed);
  const S step = fd_step<S>();
  std::vector<GradCheckResult> out;

  auto run = [&](const char* name, auto make_check) {
    GradCheckResult r{name, 0, layer_tol<S>(), trials};
    for (int i = 0; i < trials; ++i) r.max_err = std::max(r.max_err, double(make_check()));
    out.push_back(r);
  };

  run("matmul", [&] {
    T a = rand_t<S>({3, 4}, rng), b = rand_t<S>({4, 2}, rng);
    return finite_diff_check(
        [&](Graph<S>&, const T& t) { return sum_all(mul(matmul(t, b), matmul(t, b))); }, a, step);
  });
  run("bmm", [&] {
    T a = rand_t<S>({2, 3, 4}, rng), b = rand_t<S>({2, 4, 3}, rng);
    return finite_diff_check(
        [&](Graph<S>&, const T& t) { return sum_all(mul(bmm(a, t), bmm(a, t))); }, b, step);
  });
  run("softmax", [&] {
    T x = rand_t<S>({2, 5, 3}, rng, -2, 2), y = rand_t<S>({2, 5, 3}, rng);
    return finite_diff_check(
        [&](Graph<S>&, const T& t) { return sum_all(mul(softmax(t, 1), y)); }, x, step);
  });
  run("elementwise", [&] {
    T x = rand_t<S>({2, 3, 4}, rng, 0.3, 1.7), y = rand_t<S>({2, 3, 4}, rng, 0.5, 1.5);
    return finite_diff_check(
        [&](Graph<S>&, const T& t) {
          T a = mul(exp(mul_scalar(t, S(0.3))), log(add_scalar(t, S(1))));
          T b = divide(sigmoid(t), sqrt(add_scalar(mul(t, t), S(1))));
          return sum_all(mul(add(a, b), y));
        },
        x, step);
  });
  run("reductions_reshape", [&] {
    T x = rand_t<S>({2, 3, 4}, rng);
    return finite_diff_check(
        [&](Graph<S>&, const T& t) {
          T s = sum_axes(t, {0, 2}, true);
          return add(mean_all(mul(s, s)), sum_all(mul(permute(t, {1, 0, 2}), permute(t, {1, 0, 2}))));
        },
        x, step);
  });
  run("conv2d", [&] {
    auto p = Conv2dParams<S>::make(2, 3, 3, true, 1, 1);
    fill_uniform(p.kernel, -0.6, 0.6, rng);
    fill_uniform(p.bias, -0.2, 0.2, rng);
    T x = rand_t<S>({1, 3, 4, 4}, rng);
    double e1 = finite_diff_check(
        [&](Graph<S>&, const T& t) {
          T y = conv2d(t, p);
          return sum_all(mul(y, y));
        },
        x, step);
    double e2 = finite_diff_check_param(
        [&](Graph<S>& g) {
          g.watch(p.kernel);
          T y = conv2d(x, p);
          return sum_all(mul(y, y));
        },
        p.kernel, step);
    return S(std::max(e1, e2));
  });
  run("dwconv3x3", [&] {
    auto p = Conv2dParams<S>::make(3, 1, 3, true, 1, 1);
    fill_uniform(p.kernel, -0.8, 0.8, rng);
    fill_uniform(p.bias, -0.2, 0.2, rng);
    T x = rand_t<S>({1, 3, 4, 4}, rng);
    double e1 = finite_diff_check(
        [&](Graph<S>&, const T& t) {
          T y = dwconv3x3(t, p);
          return sum_all(mul(y, y));
        },
        x, step);
    double e2 = finite_diff_check_param(
        [&](Graph<S>& g) {
          g.watch(p.kernel);
          T y = dwconv3x3(x, p);
          return sum_all(mul(y, y));
        },
        p.kernel, step);
    return S(std::max(e1, e2));
  });
  run("pwconv1x1", [&] {
    auto p = LinearParams<S>::make(3, 2, true);
    fill_uniform(p.weight, -0.7, 0.7, rng);
    T x = rand_t<S>({1, 3, 3, 3}, rng);
    return finite_diff_check(
        [&](Graph<S>&, const T& t) {
          T y = pwconv1x1(t, p);
          return sum_all(mul(y, y));
        },
        x, step);
  });
  run("batchnorm_train", [&] {
    auto bn = BatchNorm2dState<S>::make(3);
    fill_uniform(bn.gamma, 0.5, 1.5, rng);
    fill_uniform(bn.beta, -0.5, 0.5, rng);
    T x = rand_t<S>({2, 3, 3, 3}, rng), y = rand_t<S>({2, 3, 3, 3}, rng);
    return finite_diff_check(
        [&](Graph<S>&, const T& t) {
          auto bc = bn;
          return sum_all(mul(batchnorm2d(t, bc, NormMode::train), y));
        },
        x, step);
  });
  run("batchnorm_eval", [&] {
    auto bn = BatchNorm2dState<S>::make(3);
    fill_uniform(bn.gamma, 0.5, 1.5, rng);
    fill_uniform(bn.running_var, 0.5, 2.0, rng);
    T x = rand_t<S>({2, 3, 3, 3}, rng), y = rand_t<S>({2, 3, 3, 3}, rng);
    return finite_diff_check(
        [&](Graph<S>&, const T& t) {
          auto bc = bn;
          return sum_all(mul(batchnorm2d(t, bc, NormMode::eval), y));
        },
        x, step);
  });
  run("layernorm", [&] {
    auto ln = LayerNormParams<S>::make(4);
    fill_uniform(ln.gamma, 0.5, 1.5, rng);
    T x = rand_t<S>({2, 5, 4}, rng), y = rand_t<S>({2, 5, 4}, rng);
    return finite_diff_check(
        [&](Graph<S>&, const T& t) { return sum_all(mul(layernorm(t, ln), y)); }, x, step);
  });
  run("bilinear_upsample2x", [&] {
    T x = rand_t<S>({1, 2, 3, 3}, rng);
    return finite_diff_check(
        [&](Graph<S>&, const T& t) {
          T y = bilinear_upsample2x(t);
          return sum_all(mul(y, y));
        },
        x, step);
  });
  run("avgpool_to", [&] {
    T x = rand_t<S>({1, 2, 4, 4}, rng);
    return finite_diff_check(
        [&](Graph<S>&, const T& t) {
          T y = avgpool_to(t, 2, 2);
          return sum_all(mul(y, y));
        },
        x, step);
  });
  run("patch_embed", [&] {
    auto p = LinearParams<S>::make(48, 4, true);
    fill_uniform(p.weight, -0.4, 0.4, rng);
    T x = rand_t<S>({1, 3, 8, 8}, rng);
    return finite_diff_check(
        [&](Graph<S>&, const T& t) {
          T y = patch_embed(t, p);
          return sum_all(mul(y, y));
        },
        x, step);
  });
  run("patch_merge", [&] {
    auto p = LinearParams<S>::make(12, 5, true);
    fill_uniform(p.weight, -0.4, 0.4, rng);
    T x = rand_t<S>({1, 3, 4, 4}, rng);
    return finite_diff_check(
        [&](Graph<S>&, const T& t) {
          T y = patch_merge(t, p);
          return sum_all(mul(y, y));
        },
        x, step);
  });
  run("losses", [&] {
    LossConfig<S> cfg;
    T gt = rand_t<S>({1, 3, 3}, rng, 0.2, 1.0);
    T pred = rand_t<S>({1, 3, 3}, rng, 0.2, 1.0);
    T mask = T::full(gt.shape, S(1));
    return finite_diff_check(
        [&](Graph<S>&, const T& t) { return umono_loss(t, gt, mask, cfg); }, pred, step);
  });
  return out;
}

// Encoder composites: UDFE block, LGFF, SRA (tolerance 1e-4 at 64-bit).
template <typename S>
std::vector<GradCheckResult> gradcheck_encoder(int trials, std::uint64_t seed) {
  using namespace gradcheck_detail;
  using T = Tensor<S>;
  Rng rng(seed);
  const S step = fd_step<S>();
  std::vector<GradCheckResult> out;

  auto make_udfe = [&rng]() {
    auto p = UdfeParams<S>::make(4, 2, 2, EncoderAblation::full);
    fill_uniform(p.cnn.dw.kernel, -0.5, 0.5, rng);
    fill_uniform(p.cnn.pw.weight, -0.5, 0.5, rng);
    fill_uniform(p.sra.wq.weight, -0.5, 0.5, rng);
    fill_uniform(p.sra.wk.weight, -0.5, 0.5, rng);
    fill_uniform(p.sra.wv.weight, -0.5, 0.5, rng);
    fill_uniform(p.sra.wg.weight, -0.5, 0.5, rng);
    fill_uniform(p.sra.reduce.weight, -0.3, 0.3, rng);
    fill_uniform(p.lgff.conv1.kernel, -0.4, 0.4, rng);
    fill_uniform(p.lgff.conv2.kernel, -0.4, 0.4, rng);
    return p;
  };

  GradCheckResult sra{"sra_attention", 0, composite_tol<S>(), trials};
  for (int i = 0; i < trials; ++i) {
    auto p = SraParams<S>::make(4, 2, 2);
    fill_uniform(p.wq.weight, -0.5, 0.5, rng);
    fill_uniform(p.wk.weight, -0.5, 0.5, rng);
    fill_uniform(p.wv.weight, -0.5, 0.5, rng);
    fill_uniform(p.wg.weight, -0.5, 0.5, rng);
    fill_uniform(p.reduce.weight, -0.3, 0.3, rng);
    T tok = rand_t<S>({1, 16, 4}, rng);
    sra.max_err = std::max(
        sra.max_err, double(finite_diff_check(
                         [&](Graph<S>&, const T& t) {
                           T y = sra_attention(t, 4, 4, p);
                           return sum_all(mul(y, y));
                         },
                         tok, step)));
    sra.max_err = std::max(
        sra.max_err, double(finite_diff_check_param(
                         [&](Graph<S>& g) {
                           g.watch(p.wk.weight);
                           T y = sra_attention(tok, 4, 4, p);
                           return sum_all(mul(y, y));
                         },
                         p.wk.weight, step)));
  }
  out.push_back(sra);

  GradCheckResult lgff{"lgff", 0, composite_tol<S>(), trials};
  for (int i = 0; i < trials; ++i) {
    auto p = LgffParams<S>::make(3);
    fill_uniform(p.conv1.kernel, -0.5, 0.5, rng);
    fill_uniform(p.conv2.kernel, -0.5, 0.5, rng);
    fill_uniform(p.conv2.bias, -0.2, 0.2, rng);
    T fl = rand_t<S>({1, 3, 4, 4}, rng), fg = rand_t<S>({1, 3, 4, 4}, rng);
    lgff.max_err = std::max(
        lgff.max_err, double(finite_diff_check(
                          [&](Graph<S>&, const T& t) {
                            auto pc = p;
                            T y = lgff_fuse(t, fg, pc, NormMode::train);
                            return sum_all(mul(y, y));
                          },
                          fl, step)));
    lgff.max_err = std::max(
        lgff.max_err, double(finite_diff_check_param(
                          [&](Graph<S>& g) {
                            g.watch(p.conv1.kernel);
                            auto y = [&] {
                              auto pc = p;
                              return lgff_fuse(fl, fg, pc, NormMode::train);
                            }();
                            return sum_all(mul(y, y));
                          },
                          p.conv1.kernel, step)));
  }
  out.push_back(lgff);

  GradCheckResult udfe{"udfe_block", 0, composite_tol<S>(), trials};
  for (int i = 0; i < trials; ++i) {
    auto p = make_udfe();
    T x = rand_t<S>({1, 4, 4, 4}, rng);
    udfe.max_err = std::max(
        udfe.max_err, double(finite_diff_check(
                          [&](Graph<S>&, const T& t) {
                            auto pc = p;
                            T y = udfe_block(t, pc, EncoderAblation::full, NormMode::train);
                            return sum_all(mul(y, y));
                          },
                          x, step)));
  }
  out.push_back(udfe);
  return out;
}

// Decoder composites: UDIA, decode stage, depth head (tolerance 1e-4).
template <typename S>
std::vector<GradCheckResult> gradcheck_decoder(int trials, std::uint64_t seed) {
  using namespace gradcheck_detail;
  using T = Tensor<S>;
  Rng rng(seed);
  const S step = fd_step<S>();
  std::vector<GradCheckResult> out;

  GradCheckResult udia{"udia_aggregate", 0, composite_tol<S>(), trials};
  for (int i = 0; i < trials; ++i) {
    auto p = UdiaParams<S>::make(4, i % 2 ? 2 : 1, NormKind::layer);
    fill_uniform(p.wq.weight, -0.6, 0.6, rng);
    fill_uniform(p.wk.weight, -0.6, 0.6, rng);
    fill_uniform(p.wv.weight, -0.6, 0.6, rng);
    T e = rand_t<S>({1, 6, 4}, rng);
    T tbar = rand_t<S>({1, 6, 1}, rng, 0.05, 0.95);
    udia.max_err = std::max(
        udia.max_err, double(finite_diff_check(
                          [&](Graph<S>&, const T& t) {
                            auto pc = p;
                            T y = udia_aggregate(t, tbar, pc, NormMode::eval);
                            return sum_all(mul(y, y));
                          },
                          e, step)));
    udia.max_err = std::max(
        udia.max_err, double(finite_diff_check_param(
                          [&](Graph<S>& g) {
                            g.watch(p.wq.weight);
                            T y = udia_aggregate(e, tbar, p, NormMode::eval);
                            return sum_all(mul(y, y));
                          },
                          p.wq.weight, step)));
  }
  out.push_back(udia);

  GradCheckResult stage{"decode_stage", 0, composite_tol<S>(), trials};
  for (int i = 0; i < trials; ++i) {
    DecodeStageParams<S> sp;
    sp.conv = Conv2dParams<S>::make(3, 5, 3, false, 1, 1);
    sp.bn = BatchNorm2dState<S>::make(3);
    fill_uniform(sp.conv.kernel, -0.4, 0.4, rng);
    T f = rand_t<S>({1, 2, 4, 4}, rng), d = rand_t<S>({1, 3, 4, 4}, rng);
    stage.max_err = std::max(
        stage.max_err, double(finite_diff_check(
                           [&](Graph<S>&, const T& t) {
                             auto pc = sp;
                             T y = decode_stage(t, d, pc, NormMode::train);
                             return sum_all(mul(y, y));
                           },
                           f, step)));
  }
  out.push_back(stage);

  GradCheckResult head{"predict_depth", 0, composite_tol<S>(), trials};
  for (int i = 0; i < trials; ++i) {
    auto p = Conv2dParams<S>::make(1, 3, 1, true);
    fill_uniform(p.kernel, -0.8, 0.8, rng);
    fill_uniform(p.bias, -0.3, 0.3, rng);
    T d = rand_t<S>({1, 3, 2, 2}, rng);
    head.max_err = std::max(
        head.max_err, double(finite_diff_check(
                          [&](Graph<S>&, const T& t) {
                            T y = predict_depth(t, p);
                            return sum_all(mul(y, y));
                          },
                          d, step)));
  }
  out.push_back(head);
  return out;
}

// Full tiny model + combined loss. Trial 0 sweeps every parameter element;
// later trials sample a handful of coordinates per tensor.
template <typename S>
std::vector<GradCheckResult> gradcheck_full(int trials, std::uint64_t seed) {
  using namespace gradcheck_detail;
  using T = Tensor<S>;
  const S step = fd_step<S>();

  EncoderConfig ec;
  ec.depths = {1, 1, 1, 1};
  ec.channels = {2, 2, 4, 4};
  ec.heads = {1, 1, 2, 2};
  ec.reduction = {2, 2, 1, 1};
  DecoderConfig dc;
  dc.widths = {4, 4, 2, 2};

  GradCheckResult r{"full_model_plus_loss", 0, composite_tol<S>(), trials};
  for (int trial = 0; trial < trials; ++trial) {
    Rng rng(seed + static_cast<std::uint64_t>(trial) * 1000003ull);
    UMonoModel<S> model(ec, dc);
    model.init_params(seed + static_cast<std::uint64_t>(trial));
    T rgb = rand_t<S>({1, 3, 32, 32}, rng, 0.05, 0.95);
    T gt = rand_t<S>({1, 1, 32, 32}, rng, 0.1, 1.0);
    T tmap = rand_t<S>({1, 1, 32, 32}, rng, 0.1, 0.95);
    LossConfig<S> loss_cfg;
    T mask = T::full(gt.shape, S(1));

    auto loss_fn = [&](Graph<S>* g) {
      T pred = model.forward(g, rgb, tmap, NormMode::train);
      return umono_loss(pred, gt, mask, loss_cfg);
    };

    // one taped pass gives the analytic gradient of every parameter
    std::vector<Tensor<S>> analytic_all;
    {
      Graph<S> g;
      Tensor<S> loss = loss_fn(&g);
      g.backward(loss);
      for (auto& entry : model.params().entries())
        if (entry.trainable) analytic_all.push_back(g.grad(*entry.tensor));
    }

    std::size_t param_idx = 0;
    for (auto& entry : model.params().entries()) {
      if (!entry.trainable) continue;
      Tensor<S>& param = *entry.tensor;
      const Tensor<S>& analytic = analytic_all[param_idx++];
      std::vector<std::size_t> coords;
      if (trial == 0) {
        for (std::size_t i = 0; i < param.data.size(); ++i) coords.push_back(i);
      } else {
        for (int k = 0; k < 8; ++k)
          coords.push_back(static_cast<std::size_t>(
              rng.below(static_cast<std::uint64_t>(param.data.size()))));
      }
      for (std::size_t i : coords) {
        const S saved = param.data[i];
        param.data[i] = saved + step;
        const S fp = loss_fn(nullptr).data[0];
        param.data[i] = saved - step;
        const S fm = loss_fn(nullptr).data[0];
        param.data[i] = saved;
        const S central = (fp - fm) / (S(2) * step);
        const S ana = analytic.data[i];
        const double err =
            std::abs(double(ana - central)) / (std::abs(double(ana)) + std::abs(double(central)) + 1e-12);
        r.max_err = std::max(r.max_err, err);
      }
    }
  }
  return {r};
}

}  // namespace umono
