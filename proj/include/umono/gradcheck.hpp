#pragma once

#include <cmath>
#include <functional>

#include "umono/graph.hpp"
#include "umono/ops.hpp"

namespace umono {

// Max relative disagreement between the tape gradient and central finite
// differences, elementwise over x:
//   max_i |analytic_i - central_i| / (|analytic_i| + |central_i| + eps)
//
// `f` is called as f(graph, tensor) and must return a scalar tensor. During
// the numeric evaluations the tensor is not watched, so f runs eagerly.
template <typename S, typename F>
S finite_diff_check(F&& f, const Tensor<S>& x, S step, S eps = S(1e-12)) {
  Tensor<S> analytic;
  {
    Graph<S> g;
    Tensor<S> xl = x.detached();
    g.watch(xl);
    Tensor<S> loss = f(g, xl);
    if (loss.numel() != 1) throw NumericError("finite_diff_check: f must be scalar-valued");
    g.backward(loss);
    analytic = g.grad(xl);
  }
  S max_err = S(0);
  Tensor<S> xp = x.detached();
  for (std::size_t i = 0; i < xp.data.size(); ++i) {
    const S saved = xp.data[i];
    Graph<S> gp, gm;
    xp.data[i] = saved + step;
    const S fp = f(gp, xp).data[0];
    xp.data[i] = saved - step;
    const S fm = f(gm, xp).data[0];
    xp.data[i] = saved;
    const S central = (fp - fm) / (S(2) * step);
    const S ana = analytic.data[i];
    const S err = std::abs(ana - central) / (std::abs(ana) + std::abs(central) + eps);
    max_err = std::max(max_err, err);
  }
  return max_err;
}

// Same check for a tensor embedded in a larger structure (a model parameter):
// `f_loss` reads `param` from wherever it lives; this routine perturbs it in
// place for the numeric side and watches it for the analytic side.
template <typename S, typename F>
S finite_diff_check_param(F&& f_loss, Tensor<S>& param, S step, S eps = S(1e-12)) {
  Tensor<S> analytic;
  {
    Graph<S> g;
    g.watch(param);
    Tensor<S> loss = f_loss(g);
    if (loss.numel() != 1) throw NumericError("finite_diff_check_param: f must be scalar-valued");
    g.backward(loss);
    analytic = g.grad(param);
  }
  S max_err = S(0);
  for (std::size_t i = 0; i < param.data.size(); ++i) {
    const S saved = param.data[i];
    Graph<S> gp, gm;
    param.data[i] = saved + step;
    const S fp = f_loss(gp).data[0];
    param.data[i] = saved - step;
    const S fm = f_loss(gm).data[0];
    param.data[i] = saved;
    const S central = (fp - fm) / (S(2) * step);
    const S ana = analytic.data[i];
    const S err = std::abs(ana - central) / (std::abs(ana) + std::abs(central) + eps);
    max_err = std::max(max_err, err);
  }
  return max_err;
}

}  // namespace umono
