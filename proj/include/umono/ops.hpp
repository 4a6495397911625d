#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "umono/graph.hpp"
#include "umono/tensor.hpp"

// Differentiable tensor ops. Every op computes its forward value eagerly;
// when an input is attached to a live Graph the op also records a node whose
// closure routes the output gradient to the inputs. Tensors without tape
// linkage are treated as constants.
namespace umono {

namespace detail {

template <typename S>
void check_finite(const char* op, const Tensor<S>& t) {
  if (!finite_checks_enabled()) return;
  if (!t.all_finite())
    throw NumericError(std::string(op) + ": produced non-finite values (shape " +
                       shape_str(t.shape) + ")");
}

inline std::vector<int> broadcast_shape(const std::vector<int>& a, const std::vector<int>& b) {
  const int ra = static_cast<int>(a.size()), rb = static_cast<int>(b.size());
  const int r = std::max(ra, rb);
  std::vector<int> out(static_cast<std::size_t>(r));
  for (int i = 0; i < r; ++i) {
    int da = i < r - ra ? 1 : a[static_cast<std::size_t>(i - (r - ra))];
    int db = i < r - rb ? 1 : b[static_cast<std::size_t>(i - (r - rb))];
    if (da != db && da != 1 && db != 1)
      throw ShapeError("cannot broadcast shapes " + shape_str(a) + " and " + shape_str(b));
    out[static_cast<std::size_t>(i)] = std::max(da, db);
  }
  return out;
}

// Strides of `shape` aligned to the trailing dims of `out_shape`; broadcast
// dims get stride 0.
inline std::vector<std::int64_t> bc_strides(const std::vector<int>& shape,
                                            const std::vector<int>& out_shape) {
  const int r = static_cast<int>(out_shape.size());
  const int rs = static_cast<int>(shape.size());
  auto own = row_major_strides(shape);
  std::vector<std::int64_t> st(static_cast<std::size_t>(r), 0);
  for (int i = 0; i < rs; ++i) {
    int oi = r - rs + i;
    st[static_cast<std::size_t>(oi)] =
        shape[static_cast<std::size_t>(i)] == 1 ? 0 : own[static_cast<std::size_t>(i)];
  }
  return st;
}

// Elementwise combine with numpy-style trailing broadcast.
template <typename S, typename F>
Tensor<S> ew_binary(const Tensor<S>& a, const Tensor<S>& b, F&& f) {
  if (a.shape == b.shape) {
    Tensor<S> out(a.shape);
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] = f(a.data[i], b.data[i]);
    return out;
  }
  auto os = broadcast_shape(a.shape, b.shape);
  Tensor<S> out(os);
  const int r = static_cast<int>(os.size());
  auto sa = bc_strides(a.shape, os), sb = bc_strides(b.shape, os);
  std::vector<int> idx(static_cast<std::size_t>(r), 0);
  std::int64_t oa = 0, ob = 0;
  const std::int64_t n = out.numel();
  for (std::int64_t i = 0; i < n; ++i) {
    out.data[static_cast<std::size_t>(i)] =
        f(a.data[static_cast<std::size_t>(oa)], b.data[static_cast<std::size_t>(ob)]);
    for (int ax = r - 1; ax >= 0; --ax) {
      auto u = static_cast<std::size_t>(ax);
      ++idx[u];
      oa += sa[u];
      ob += sb[u];
      if (idx[u] < os[u]) break;
      oa -= sa[u] * os[u];
      ob -= sb[u] * os[u];
      idx[u] = 0;
    }
  }
  return out;
}

// Sums `g` down to `target` (the reverse of broadcasting target up to g).
template <typename S>
Tensor<S> reduce_to(const Tensor<S>& g, const std::vector<int>& target) {
  if (g.shape == target) return g;
  Tensor<S> out(target, S(0));
  const auto& os = g.shape;
  const int r = static_cast<int>(os.size());
  auto st = bc_strides(target, os);
  std::vector<int> idx(static_cast<std::size_t>(r), 0);
  std::int64_t ot = 0;
  const std::int64_t n = g.numel();
  for (std::int64_t i = 0; i < n; ++i) {
    out.data[static_cast<std::size_t>(ot)] += g.data[static_cast<std::size_t>(i)];
    for (int ax = r - 1; ax >= 0; --ax) {
      auto u = static_cast<std::size_t>(ax);
      ++idx[u];
      ot += st[u];
      if (idx[u] < os[u]) break;
      ot -= st[u] * os[u];
      idx[u] = 0;
    }
  }
  return out;
}

// Broadcasts `g` up to `target` shape.
template <typename S>
Tensor<S> expand_to(const Tensor<S>& g, const std::vector<int>& target) {
  if (g.shape == target) return g;
  Tensor<S> out(target);
  const int r = static_cast<int>(target.size());
  auto st = bc_strides(g.shape, target);
  std::vector<int> idx(static_cast<std::size_t>(r), 0);
  std::int64_t og = 0;
  const std::int64_t n = out.numel();
  for (std::int64_t i = 0; i < n; ++i) {
    out.data[static_cast<std::size_t>(i)] = g.data[static_cast<std::size_t>(og)];
    for (int ax = r - 1; ax >= 0; --ax) {
      auto u = static_cast<std::size_t>(ax);
      ++idx[u];
      og += st[u];
      if (idx[u] < target[u]) break;
      og -= st[u] * target[u];
      idx[u] = 0;
    }
  }
  return out;
}

template <typename S>
using EMat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename S>
using EMap = Eigen::Map<EMat<S>>;
template <typename S>
using ECMap = Eigen::Map<const EMat<S>>;

}  // namespace detail

// ---------------------------------------------------------------------------
// elementwise binary

template <typename S, typename Fwd, typename Bwd>
Tensor<S> taped_binary(const char* name, const Tensor<S>& a, const Tensor<S>& b, Fwd&& fwd,
                       Bwd&& make_grads) {
  Tensor<S> out = detail::ew_binary(a, b, fwd);
  detail::check_finite(name, out);
  Graph<S>* g = detail::same_graph<S>({&a, &b});
  if (g) {
    int ia = detail::id_in(g, a), ib = detail::id_in(g, b);
    if (ia >= 0 || ib >= 0) {
      Tensor<S> av = a.detached(), bv = b.detached();
      auto fn = [ia, ib, av, bv, make_grads](Graph<S>& gr, const Tensor<S>& gout) {
        auto [ga, gb] = make_grads(av, bv, gout);
        if (ia >= 0) gr.accumulate(ia, detail::reduce_to(ga, av.shape));
        if (ib >= 0) gr.accumulate(ib, detail::reduce_to(gb, bv.shape));
      };
      int id = g->add_op(name, {ia, ib}, out.shape, std::move(fn));
      g->attach(out, id);
    }
  }
  return out;
}

template <typename S>
Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b) {
  return taped_binary(
      "add", a, b, [](S x, S y) { return x + y; },
      [](const Tensor<S>&, const Tensor<S>&, const Tensor<S>& gout) {
        return std::pair<Tensor<S>, Tensor<S>>(gout, gout);
      });
}

template <typename S>
Tensor<S> sub(const Tensor<S>& a, const Tensor<S>& b) {
  return taped_binary(
      "sub", a, b, [](S x, S y) { return x - y; },
      [](const Tensor<S>&, const Tensor<S>&, const Tensor<S>& gout) {
        Tensor<S> gb = gout;
        for (auto& v : gb.data) v = -v;
        return std::pair<Tensor<S>, Tensor<S>>(gout, std::move(gb));
      });
}

// Hadamard product.
template <typename S>
Tensor<S> mul(const Tensor<S>& a, const Tensor<S>& b) {
  return taped_binary(
      "mul", a, b, [](S x, S y) { return x * y; },
      [](const Tensor<S>& av, const Tensor<S>& bv, const Tensor<S>& gout) {
        Tensor<S> ga = detail::ew_binary(gout, bv, [](S g, S y) { return g * y; });
        Tensor<S> gb = detail::ew_binary(gout, av, [](S g, S x) { return g * x; });
        return std::pair<Tensor<S>, Tensor<S>>(std::move(ga), std::move(gb));
      });
}

template <typename S>
Tensor<S> divide(const Tensor<S>& a, const Tensor<S>& b) {
  return taped_binary(
      "div", a, b, [](S x, S y) { return x / y; },
      [](const Tensor<S>& av, const Tensor<S>& bv, const Tensor<S>& gout) {
        Tensor<S> ga = detail::ew_binary(gout, bv, [](S g, S y) { return g / y; });
        Tensor<S> axb = detail::ew_binary(av, bv, [](S x, S y) { return -x / (y * y); });
        Tensor<S> gb = detail::ew_binary(gout, axb, [](S g, S d) { return g * d; });
        return std::pair<Tensor<S>, Tensor<S>>(std::move(ga), std::move(gb));
      });
}

// ---------------------------------------------------------------------------
// elementwise unary and scalar ops

template <typename S, typename Fwd, typename Bwd>
Tensor<S> taped_unary(const char* name, const Tensor<S>& x, Fwd&& fwd, Bwd&& dydx_from) {
  Tensor<S> out(x.shape);
  for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] = fwd(x.data[i]);
  detail::check_finite(name, out);
  Graph<S>* g = detail::live_graph(x);
  if (g) {
    int ix = x.node;
    // dydx_from sees (input value, output value) per element.
    Tensor<S> xv = x.detached(), yv = out.detached();
    auto fn = [ix, xv, yv, dydx_from](Graph<S>& gr, const Tensor<S>& gout) {
      Tensor<S> gx(xv.shape);
      for (std::size_t i = 0; i < gx.data.size(); ++i)
        gx.data[i] = gout.data[i] * dydx_from(xv.data[i], yv.data[i]);
      gr.accumulate(ix, gx);
    };
    int id = g->add_op(name, {ix}, out.shape, std::move(fn));
    g->attach(out, id);
  }
  return out;
}

template <typename S>
Tensor<S> neg(const Tensor<S>& x) {
  return taped_unary(
      "neg", x, [](S v) { return -v; }, [](S, S) { return S(-1); });
}

template <typename S>
Tensor<S> exp(const Tensor<S>& x) {
  return taped_unary(
      "exp", x, [](S v) { return std::exp(v); }, [](S, S y) { return y; });
}

template <typename S>
Tensor<S> log(const Tensor<S>& x) {
  return taped_unary(
      "log", x, [](S v) { return std::log(v); }, [](S xv, S) { return S(1) / xv; });
}

template <typename S>
Tensor<S> sqrt(const Tensor<S>& x) {
  return taped_unary(
      "sqrt", x, [](S v) { return std::sqrt(v); }, [](S, S y) { return S(0.5) / y; });
}

template <typename S>
Tensor<S> absval(const Tensor<S>& x) {
  return taped_unary(
      "abs", x, [](S v) { return std::abs(v); },
      [](S xv, S) { return xv > S(0) ? S(1) : (xv < S(0) ? S(-1) : S(0)); });
}

template <typename S>
Tensor<S> relu(const Tensor<S>& x) {
  return taped_unary(
      "relu", x, [](S v) { return v > S(0) ? v : S(0); },
      [](S xv, S) { return xv > S(0) ? S(1) : S(0); });
}

template <typename S>
Tensor<S> sigmoid(const Tensor<S>& x) {
  auto fwd = [](S v) {
    if (v >= S(0)) return S(1) / (S(1) + std::exp(-v));
    S e = std::exp(v);
    return e / (S(1) + e);
  };
  return taped_unary("sigmoid", x, fwd, [](S, S y) { return y * (S(1) - y); });
}

template <typename S>
Tensor<S> add_scalar(const Tensor<S>& x, S c) {
  return taped_unary(
      "add_scalar", x, [c](S v) { return v + c; }, [](S, S) { return S(1); });
}

template <typename S>
Tensor<S> mul_scalar(const Tensor<S>& x, S c) {
  return taped_unary(
      "mul_scalar", x, [c](S v) { return v * c; }, [c](S, S) { return c; });
}

template <typename S>
Tensor<S> pow_scalar(const Tensor<S>& x, S p) {
  return taped_unary(
      "pow_scalar", x, [p](S v) { return std::pow(v, p); },
      [p](S xv, S) { return p * std::pow(xv, p - S(1)); });
}

// ---------------------------------------------------------------------------
// reductions

template <typename S>
Tensor<S> sum_all(const Tensor<S>& x) {
  Tensor<S> out({1});
  S acc = S(0);
  for (S v : x.data) acc += v;
  out.data[0] = acc;
  detail::check_finite("sum", out);
  Graph<S>* g = detail::live_graph(x);
  if (g) {
    int ix = x.node;
    std::vector<int> xs = x.shape;
    auto fn = [ix, xs](Graph<S>& gr, const Tensor<S>& gout) {
      gr.accumulate(ix, Tensor<S>(xs, gout.data[0]));
    };
    g->attach(out, g->add_op("sum", {ix}, out.shape, std::move(fn)));
  }
  return out;
}

template <typename S>
Tensor<S> mean_all(const Tensor<S>& x) {
  if (x.numel() == 0) throw ShapeError("mean: empty tensor");
  return mul_scalar(sum_all(x), S(1) / static_cast<S>(x.numel()));
}

// Sum over the given axes; reduced extents become 1 when keepdim, otherwise
// they are dropped.
template <typename S>
Tensor<S> sum_axes(const Tensor<S>& x, std::vector<int> axes, bool keepdim = true) {
  std::vector<bool> red(static_cast<std::size_t>(x.rank()), false);
  for (int a : axes) {
    if (a < 0) a += x.rank();
    if (a < 0 || a >= x.rank()) throw ShapeError("sum_axes: axis out of range");
    red[static_cast<std::size_t>(a)] = true;
  }
  std::vector<int> keep_shape = x.shape;
  for (int i = 0; i < x.rank(); ++i)
    if (red[static_cast<std::size_t>(i)]) keep_shape[static_cast<std::size_t>(i)] = 1;
  Tensor<S> out = detail::reduce_to(x, keep_shape);
  detail::check_finite("sum_axes", out);
  Graph<S>* g = detail::live_graph(x);
  if (g) {
    int ix = x.node;
    std::vector<int> xs = x.shape, ks = keep_shape;
    auto fn = [ix, xs, ks](Graph<S>& gr, const Tensor<S>& gout) {
      Tensor<S> gk = gout;
      gk.shape = ks;  // same numel whether or not dims were kept
      gr.accumulate(ix, detail::expand_to(gk, xs));
    };
    g->attach(out, g->add_op("sum_axes", {ix}, out.shape, std::move(fn)));
  }
  if (!keepdim) {
    std::vector<int> squeezed;
    for (int i = 0; i < x.rank(); ++i)
      if (!red[static_cast<std::size_t>(i)]) squeezed.push_back(x.shape[static_cast<std::size_t>(i)]);
    if (squeezed.empty()) squeezed.push_back(1);
    out.shape = squeezed;
  }
  return out;
}

// ---------------------------------------------------------------------------
// shape ops

template <typename S>
Tensor<S> reshape(const Tensor<S>& x, std::vector<int> new_shape) {
  if (shape_numel(new_shape) != x.numel())
    throw ShapeError("reshape: cannot view " + shape_str(x.shape) + " as " +
                     shape_str(new_shape));
  Tensor<S> out;
  out.shape = new_shape;
  out.data = x.data;
  Graph<S>* g = detail::live_graph(x);
  if (g) {
    int ix = x.node;
    auto fn = [ix](Graph<S>& gr, const Tensor<S>& gout) { gr.accumulate(ix, gout); };
    g->attach(out, g->add_op("reshape", {ix}, out.shape, std::move(fn)));
  }
  return out;
}

namespace detail {
template <typename S>
Tensor<S> permute_value(const Tensor<S>& x, const std::vector<int>& perm) {
  const int r = x.rank();
  std::vector<int> os(static_cast<std::size_t>(r));
  for (int i = 0; i < r; ++i)
    os[static_cast<std::size_t>(i)] = x.shape[static_cast<std::size_t>(perm[static_cast<std::size_t>(i)])];
  Tensor<S> out(os);
  auto in_st = row_major_strides(x.shape);
  std::vector<std::int64_t> st(static_cast<std::size_t>(r));
  for (int i = 0; i < r; ++i)
    st[static_cast<std::size_t>(i)] = in_st[static_cast<std::size_t>(perm[static_cast<std::size_t>(i)])];
  std::vector<int> idx(static_cast<std::size_t>(r), 0);
  std::int64_t oin = 0;
  const std::int64_t n = out.numel();
  for (std::int64_t i = 0; i < n; ++i) {
    out.data[static_cast<std::size_t>(i)] = x.data[static_cast<std::size_t>(oin)];
    for (int ax = r - 1; ax >= 0; --ax) {
      auto u = static_cast<std::size_t>(ax);
      ++idx[u];
      oin += st[u];
      if (idx[u] < os[u]) break;
      oin -= st[u] * os[u];
      idx[u] = 0;
    }
  }
  return out;
}
}  // namespace detail

template <typename S>
Tensor<S> permute(const Tensor<S>& x, std::vector<int> perm) {
  if (static_cast<int>(perm.size()) != x.rank())
    throw ShapeError("permute: axes count " + std::to_string(perm.size()) +
                     " does not match rank of " + shape_str(x.shape));
  Tensor<S> out = detail::permute_value(x, perm);
  Graph<S>* g = detail::live_graph(x);
  if (g) {
    int ix = x.node;
    std::vector<int> inv(perm.size());
    for (std::size_t i = 0; i < perm.size(); ++i)
      inv[static_cast<std::size_t>(perm[i])] = static_cast<int>(i);
    auto fn = [ix, inv](Graph<S>& gr, const Tensor<S>& gout) {
      gr.accumulate(ix, detail::permute_value(gout, inv));
    };
    g->attach(out, g->add_op("permute", {ix}, out.shape, std::move(fn)));
  }
  return out;
}

template <typename S>
Tensor<S> transpose(const Tensor<S>& x) {
  if (x.rank() != 2) throw ShapeError("transpose: expects rank-2, got " + shape_str(x.shape));
  return permute(x, {1, 0});
}

template <typename S>
Tensor<S> concat(const std::vector<Tensor<S>>& parts, int axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const int r = parts[0].rank();
  if (axis < 0) axis += r;
  std::vector<int> os = parts[0].shape;
  for (std::size_t p = 1; p < parts.size(); ++p) {
    if (parts[p].rank() != r) throw ShapeError("concat: rank mismatch");
    for (int i = 0; i < r; ++i)
      if (i != axis && parts[p].shape[static_cast<std::size_t>(i)] != os[static_cast<std::size_t>(i)])
        throw ShapeError("concat: shapes " + shape_str(os) + " and " + shape_str(parts[p].shape) +
                         " differ outside axis " + std::to_string(axis));
    os[static_cast<std::size_t>(axis)] += parts[p].shape[static_cast<std::size_t>(axis)];
  }
  Tensor<S> out(os);
  std::int64_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= os[static_cast<std::size_t>(i)];
  for (int i = axis + 1; i < r; ++i) inner *= os[static_cast<std::size_t>(i)];
  const std::int64_t out_ax = os[static_cast<std::size_t>(axis)];
  std::int64_t off = 0;
  std::vector<std::int64_t> part_off(parts.size());
  for (std::size_t p = 0; p < parts.size(); ++p) {
    part_off[p] = off;
    const std::int64_t ax = parts[p].shape[static_cast<std::size_t>(axis)];
    for (std::int64_t o = 0; o < outer; ++o)
      std::copy_n(parts[p].data.begin() + o * ax * inner, ax * inner,
                  out.data.begin() + (o * out_ax + off) * inner);
    off += ax;
  }
  Graph<S>* g = nullptr;
  for (const auto& p : parts) {
    Graph<S>* gp = detail::live_graph(p);
    if (gp && g && gp != g) throw NumericError("concat mixes tensors from two different graphs");
    if (gp) g = gp;
  }
  if (g) {
    std::vector<int> ids(parts.size());
    std::vector<std::vector<int>> shapes(parts.size());
    bool any = false;
    for (std::size_t p = 0; p < parts.size(); ++p) {
      ids[p] = detail::id_in(g, parts[p]);
      shapes[p] = parts[p].shape;
      any = any || ids[p] >= 0;
    }
    if (any) {
      auto fn = [ids, shapes, axis, outer, inner, out_ax, part_off](Graph<S>& gr,
                                                                    const Tensor<S>& gout) {
        for (std::size_t p = 0; p < ids.size(); ++p) {
          if (ids[p] < 0) continue;
          Tensor<S> gp(shapes[p]);
          const std::int64_t ax = shapes[p][static_cast<std::size_t>(axis)];
          for (std::int64_t o = 0; o < outer; ++o)
            std::copy_n(gout.data.begin() + (o * out_ax + part_off[p]) * inner, ax * inner,
                        gp.data.begin() + o * ax * inner);
          gr.accumulate(ids[p], gp);
        }
      };
      g->attach(out, g->add_op("concat", ids, out.shape, std::move(fn)));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// matrix products

template <typename S>
Tensor<S> matmul(const Tensor<S>& a, const Tensor<S>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
    throw ShapeError("matmul: incompatible shapes " + shape_str(a.shape) + " and " +
                     shape_str(b.shape));
  const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor<S> out({m, n});
  detail::ECMap<S> ma(a.data.data(), m, k);
  detail::ECMap<S> mb(b.data.data(), k, n);
  detail::EMap<S> mo(out.data.data(), m, n);
  mo.noalias() = ma * mb;
  detail::check_finite("matmul", out);
  Graph<S>* g = detail::same_graph<S>({&a, &b});
  if (g) {
    int ia = detail::id_in(g, a), ib = detail::id_in(g, b);
    if (ia >= 0 || ib >= 0) {
      Tensor<S> av = a.detached(), bv = b.detached();
      auto fn = [ia, ib, av, bv, m, k, n](Graph<S>& gr, const Tensor<S>& gout) {
        detail::ECMap<S> mg(gout.data.data(), m, n);
        detail::ECMap<S> ma2(av.data.data(), m, k);
        detail::ECMap<S> mb2(bv.data.data(), k, n);
        if (ia >= 0) {
          Tensor<S> ga({m, k});
          detail::EMap<S>(ga.data.data(), m, k).noalias() = mg * mb2.transpose();
          gr.accumulate(ia, ga);
        }
        if (ib >= 0) {
          Tensor<S> gb({k, n});
          detail::EMap<S>(gb.data.data(), k, n).noalias() = ma2.transpose() * mg;
          gr.accumulate(ib, gb);
        }
      };
      g->attach(out, g->add_op("matmul", {ia, ib}, out.shape, std::move(fn)));
    }
  }
  return out;
}

// Batched matmul over matching leading batch extents.
template <typename S>
Tensor<S> bmm(const Tensor<S>& a, const Tensor<S>& b) {
  if (a.rank() != 3 || b.rank() != 3 || a.dim(0) != b.dim(0) || a.dim(2) != b.dim(1))
    throw ShapeError("bmm: incompatible shapes " + shape_str(a.shape) + " and " +
                     shape_str(b.shape));
  const int bs = a.dim(0), m = a.dim(1), k = a.dim(2), n = b.dim(2);
  Tensor<S> out({bs, m, n});
  for (int i = 0; i < bs; ++i) {
    detail::ECMap<S> ma(a.data.data() + std::int64_t(i) * m * k, m, k);
    detail::ECMap<S> mb(b.data.data() + std::int64_t(i) * k * n, k, n);
    detail::EMap<S> mo(out.data.data() + std::int64_t(i) * m * n, m, n);
    mo.noalias() = ma * mb;
  }
  detail::check_finite("bmm", out);
  Graph<S>* g = detail::same_graph<S>({&a, &b});
  if (g) {
    int ia = detail::id_in(g, a), ib = detail::id_in(g, b);
    if (ia >= 0 || ib >= 0) {
      Tensor<S> av = a.detached(), bv = b.detached();
      auto fn = [ia, ib, av, bv, bs, m, k, n](Graph<S>& gr, const Tensor<S>& gout) {
        Tensor<S> ga({bs, m, k}), gb({bs, k, n});
        for (int i = 0; i < bs; ++i) {
          detail::ECMap<S> mg(gout.data.data() + std::int64_t(i) * m * n, m, n);
          detail::ECMap<S> ma2(av.data.data() + std::int64_t(i) * m * k, m, k);
          detail::ECMap<S> mb2(bv.data.data() + std::int64_t(i) * k * n, k, n);
          detail::EMap<S>(ga.data.data() + std::int64_t(i) * m * k, m, k).noalias() =
              mg * mb2.transpose();
          detail::EMap<S>(gb.data.data() + std::int64_t(i) * k * n, k, n).noalias() =
              ma2.transpose() * mg;
        }
        if (ia >= 0) gr.accumulate(ia, ga);
        if (ib >= 0) gr.accumulate(ib, gb);
      };
      g->attach(out, g->add_op("bmm", {ia, ib}, out.shape, std::move(fn)));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// softmax

template <typename S>
Tensor<S> softmax(const Tensor<S>& x, int axis) {
  if (axis < 0) axis += x.rank();
  if (axis < 0 || axis >= x.rank()) throw ShapeError("softmax: axis out of range");
  const int n = x.dim(axis);
  std::int64_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= x.dim(i);
  for (int i = axis + 1; i < x.rank(); ++i) inner *= x.dim(i);
  Tensor<S> out(x.shape);
  for (std::int64_t o = 0; o < outer; ++o) {
    for (std::int64_t in = 0; in < inner; ++in) {
      const std::int64_t base = o * n * inner + in;
      S mx = x.data[static_cast<std::size_t>(base)];
      for (int j = 1; j < n; ++j)
        mx = std::max(mx, x.data[static_cast<std::size_t>(base + j * inner)]);
      S denom = S(0);
      for (int j = 0; j < n; ++j) {
        S e = std::exp(x.data[static_cast<std::size_t>(base + j * inner)] - mx);
        out.data[static_cast<std::size_t>(base + j * inner)] = e;
        denom += e;
      }
      for (int j = 0; j < n; ++j) out.data[static_cast<std::size_t>(base + j * inner)] /= denom;
    }
  }
  detail::check_finite("softmax", out);
  Graph<S>* g = detail::live_graph(x);
  if (g) {
    int ix = x.node;
    Tensor<S> yv = out.detached();
    auto fn = [ix, yv, outer, inner, n](Graph<S>& gr, const Tensor<S>& gout) {
      Tensor<S> gx(yv.shape);
      for (std::int64_t o = 0; o < outer; ++o) {
        for (std::int64_t in = 0; in < inner; ++in) {
          const std::int64_t base = o * n * inner + in;
          S dot = S(0);
          for (int j = 0; j < n; ++j) {
            auto k = static_cast<std::size_t>(base + j * inner);
            dot += gout.data[k] * yv.data[k];
          }
          for (int j = 0; j < n; ++j) {
            auto k = static_cast<std::size_t>(base + j * inner);
            gx.data[k] = yv.data[k] * (gout.data[k] - dot);
          }
        }
      }
      gr.accumulate(ix, gx);
    };
    g->attach(out, g->add_op("softmax", {ix}, out.shape, std::move(fn)));
  }
  return out;
}

// ---------------------------------------------------------------------------
// spatial gather/resample ops

// Unfolds kh x kw patches into columns: [B,C,H,W] -> [B, OH*OW, C*kh*kw],
// column index c*kh*kw + ky*kw + kx. Out-of-image taps read as zero.
template <typename S>
Tensor<S> im2col(const Tensor<S>& x, int kh, int kw, int sh, int sw, int ph, int pw) {
  if (x.rank() != 4) throw ShapeError("im2col: expects [B,C,H,W], got " + shape_str(x.shape));
  const int B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  if ((H + 2 * ph - kh) % sh != 0 || (W + 2 * pw - kw) % sw != 0)
    throw ShapeError("im2col: extents " + shape_str(x.shape) + " do not admit kernel " +
                     std::to_string(kh) + "x" + std::to_string(kw) + " stride " +
                     std::to_string(sh) + "x" + std::to_string(sw) + " pad " + std::to_string(ph) +
                     "x" + std::to_string(pw));
  const int OH = (H + 2 * ph - kh) / sh + 1, OW = (W + 2 * pw - kw) / sw + 1;
  const int K = C * kh * kw;
  Tensor<S> out({B, OH * OW, K});
  for (int b = 0; b < B; ++b) {
    for (int oy = 0; oy < OH; ++oy) {
      for (int ox = 0; ox < OW; ++ox) {
        const std::int64_t row = (std::int64_t(b) * OH * OW + std::int64_t(oy) * OW + ox) * K;
        for (int c = 0; c < C; ++c) {
          const std::int64_t plane = (std::int64_t(b) * C + c) * H * W;
          for (int ky = 0; ky < kh; ++ky) {
            const int y = oy * sh - ph + ky;
            for (int kx = 0; kx < kw; ++kx) {
              const int xx = ox * sw - pw + kx;
              S v = S(0);
              if (y >= 0 && y < H && xx >= 0 && xx < W)
                v = x.data[static_cast<std::size_t>(plane + std::int64_t(y) * W + xx)];
              out.data[static_cast<std::size_t>(row + c * kh * kw + ky * kw + kx)] = v;
            }
          }
        }
      }
    }
  }
  Graph<S>* g = detail::live_graph(x);
  if (g) {
    int ix = x.node;
    std::vector<int> xs = x.shape;
    auto fn = [ix, xs, kh, kw, sh, sw, ph, pw](Graph<S>& gr, const Tensor<S>& gout) {
      const int B2 = xs[0], C2 = xs[1], H2 = xs[2], W2 = xs[3];
      const int OH2 = (H2 + 2 * ph - kh) / sh + 1, OW2 = (W2 + 2 * pw - kw) / sw + 1;
      const int K2 = C2 * kh * kw;
      Tensor<S> gx(xs, S(0));
      for (int b = 0; b < B2; ++b) {
        for (int oy = 0; oy < OH2; ++oy) {
          for (int ox = 0; ox < OW2; ++ox) {
            const std::int64_t row =
                (std::int64_t(b) * OH2 * OW2 + std::int64_t(oy) * OW2 + ox) * K2;
            for (int c = 0; c < C2; ++c) {
              const std::int64_t plane = (std::int64_t(b) * C2 + c) * H2 * W2;
              for (int ky = 0; ky < kh; ++ky) {
                const int y = oy * sh - ph + ky;
                if (y < 0 || y >= H2) continue;
                for (int kx = 0; kx < kw; ++kx) {
                  const int xx = ox * sw - pw + kx;
                  if (xx < 0 || xx >= W2) continue;
                  gx.data[static_cast<std::size_t>(plane + std::int64_t(y) * W2 + xx)] +=
                      gout.data[static_cast<std::size_t>(row + c * kh * kw + ky * kw + kx)];
                }
              }
            }
          }
        }
      }
      gr.accumulate(ix, gx);
    };
    g->attach(out, g->add_op("im2col", {ix}, out.shape, std::move(fn)));
  }
  return out;
}

namespace detail {
// Source taps for 2x bilinear upsampling without corner alignment.
struct Lerp {
  int i0, i1;
  double w1;  // weight of i1; i0 gets 1-w1
};
inline std::vector<Lerp> upsample2x_taps(int n) {
  std::vector<Lerp> taps(static_cast<std::size_t>(2 * n));
  for (int o = 0; o < 2 * n; ++o) {
    double src = (o + 0.5) / 2.0 - 0.5;
    int i0 = static_cast<int>(std::floor(src));
    double w1 = src - i0;
    int c0 = std::clamp(i0, 0, n - 1);
    int c1 = std::clamp(i0 + 1, 0, n - 1);
    taps[static_cast<std::size_t>(o)] = Lerp{c0, c1, w1};
  }
  return taps;
}
}  // namespace detail

// 2x bilinear upsampling, half-pixel centers (no corner alignment).
template <typename S>
Tensor<S> bilinear_upsample2x(const Tensor<S>& x) {
  if (x.rank() != 4)
    throw ShapeError("bilinear_upsample2x: expects [B,C,H,W], got " + shape_str(x.shape));
  const int B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  auto ty = detail::upsample2x_taps(H), tx = detail::upsample2x_taps(W);
  Tensor<S> out({B, C, 2 * H, 2 * W});
  for (int bc = 0; bc < B * C; ++bc) {
    const S* in = x.data.data() + std::int64_t(bc) * H * W;
    S* o = out.data.data() + std::int64_t(bc) * 4 * H * W;
    for (int oy = 0; oy < 2 * H; ++oy) {
      const auto& l = ty[static_cast<std::size_t>(oy)];
      for (int ox = 0; ox < 2 * W; ++ox) {
        const auto& m = tx[static_cast<std::size_t>(ox)];
        double v = (1 - l.w1) * ((1 - m.w1) * in[l.i0 * W + m.i0] + m.w1 * in[l.i0 * W + m.i1]) +
                   l.w1 * ((1 - m.w1) * in[l.i1 * W + m.i0] + m.w1 * in[l.i1 * W + m.i1]);
        o[std::int64_t(oy) * 2 * W + ox] = static_cast<S>(v);
      }
    }
  }
  detail::check_finite("bilinear_upsample2x", out);
  Graph<S>* g = detail::live_graph(x);
  if (g) {
    int ix = x.node;
    std::vector<int> xs = x.shape;
    auto fn = [ix, xs, ty, tx](Graph<S>& gr, const Tensor<S>& gout) {
      const int B2 = xs[0], C2 = xs[1], H2 = xs[2], W2 = xs[3];
      Tensor<S> gx(xs, S(0));
      for (int bc = 0; bc < B2 * C2; ++bc) {
        S* gi = gx.data.data() + std::int64_t(bc) * H2 * W2;
        const S* go = gout.data.data() + std::int64_t(bc) * 4 * H2 * W2;
        for (int oy = 0; oy < 2 * H2; ++oy) {
          const auto& l = ty[static_cast<std::size_t>(oy)];
          for (int ox = 0; ox < 2 * W2; ++ox) {
            const auto& m = tx[static_cast<std::size_t>(ox)];
            const S gv = go[std::int64_t(oy) * 2 * W2 + ox];
            gi[l.i0 * W2 + m.i0] += static_cast<S>((1 - l.w1) * (1 - m.w1)) * gv;
            gi[l.i0 * W2 + m.i1] += static_cast<S>((1 - l.w1) * m.w1) * gv;
            gi[l.i1 * W2 + m.i0] += static_cast<S>(l.w1 * (1 - m.w1)) * gv;
            gi[l.i1 * W2 + m.i1] += static_cast<S>(l.w1 * m.w1) * gv;
          }
        }
      }
      gr.accumulate(ix, gx);
    };
    g->attach(out, g->add_op("bilinear_upsample2x", {ix}, out.shape, std::move(fn)));
  }
  return out;
}

// Block-mean pooling to an exact divisor grid.
template <typename S>
Tensor<S> avgpool_to(const Tensor<S>& x, int th, int tw) {
  if (x.rank() != 4) throw ShapeError("avgpool_to: expects [B,C,H,W], got " + shape_str(x.shape));
  const int B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  if (th <= 0 || tw <= 0 || H % th != 0 || W % tw != 0)
    throw ShapeError("avgpool_to: target " + std::to_string(th) + "x" + std::to_string(tw) +
                     " does not divide source " + shape_str(x.shape));
  const int bh = H / th, bw = W / tw;
  const S inv = S(1) / static_cast<S>(bh * bw);
  Tensor<S> out({B, C, th, tw});
  for (int bc = 0; bc < B * C; ++bc) {
    const S* in = x.data.data() + std::int64_t(bc) * H * W;
    S* o = out.data.data() + std::int64_t(bc) * th * tw;
    for (int oy = 0; oy < th; ++oy)
      for (int ox = 0; ox < tw; ++ox) {
        S acc = S(0);
        for (int yy = 0; yy < bh; ++yy)
          for (int xx = 0; xx < bw; ++xx) acc += in[(oy * bh + yy) * W + ox * bw + xx];
        o[oy * tw + ox] = acc * inv;
      }
  }
  detail::check_finite("avgpool_to", out);
  Graph<S>* g = detail::live_graph(x);
  if (g) {
    int ix = x.node;
    std::vector<int> xs = x.shape;
    auto fn = [ix, xs, th, tw, bh, bw, inv](Graph<S>& gr, const Tensor<S>& gout) {
      const int B2 = xs[0], C2 = xs[1], W2 = xs[3];
      Tensor<S> gx(xs);
      for (int bc = 0; bc < B2 * C2; ++bc) {
        S* gi = gx.data.data() + std::int64_t(bc) * xs[2] * W2;
        const S* go = gout.data.data() + std::int64_t(bc) * th * tw;
        for (int oy = 0; oy < th; ++oy)
          for (int ox = 0; ox < tw; ++ox) {
            const S gv = go[oy * tw + ox] * inv;
            for (int yy = 0; yy < bh; ++yy)
              for (int xx = 0; xx < bw; ++xx) gi[(oy * bh + yy) * W2 + ox * bw + xx] = gv;
          }
      }
      gr.accumulate(ix, gx);
    };
    g->attach(out, g->add_op("avgpool_to", {ix}, out.shape, std::move(fn)));
  }
  return out;
}

// Depthwise 3x3 convolution, stride 1, same padding. Kernel is [C,1,3,3].
template <typename S>
Tensor<S> depthwise3x3(const Tensor<S>& x, const Tensor<S>& kernel) {
  if (x.rank() != 4)
    throw ShapeError("depthwise3x3: expects [B,C,H,W], got " + shape_str(x.shape));
  const int B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  if (kernel.shape != std::vector<int>{C, 1, 3, 3})
    throw ShapeError("depthwise3x3: kernel " + shape_str(kernel.shape) + " does not match input " +
                     shape_str(x.shape));
  Tensor<S> out(x.shape);
  auto run = [&](const S* in, const S* kk, S* o) {
    for (int y = 0; y < H; ++y)
      for (int xx = 0; xx < W; ++xx) {
        S acc = S(0);
        for (int ky = -1; ky <= 1; ++ky) {
          const int yy = y + ky;
          if (yy < 0 || yy >= H) continue;
          for (int kx = -1; kx <= 1; ++kx) {
            const int xw = xx + kx;
            if (xw < 0 || xw >= W) continue;
            acc += in[yy * W + xw] * kk[(ky + 1) * 3 + (kx + 1)];
          }
        }
        o[y * W + xx] = acc;
      }
  };
  for (int b = 0; b < B; ++b)
    for (int c = 0; c < C; ++c)
      run(x.data.data() + (std::int64_t(b) * C + c) * H * W, kernel.data.data() + c * 9,
          out.data.data() + (std::int64_t(b) * C + c) * H * W);
  detail::check_finite("depthwise3x3", out);
  Graph<S>* g = detail::same_graph<S>({&x, &kernel});
  if (g) {
    int ix = detail::id_in(g, x), ik = detail::id_in(g, kernel);
    if (ix >= 0 || ik >= 0) {
      Tensor<S> xv = x.detached(), kv = kernel.detached();
      auto fn = [ix, ik, xv, kv, B, C, H, W](Graph<S>& gr, const Tensor<S>& gout) {
        if (ix >= 0) {
          // input grad = correlation with the flipped kernel
          Tensor<S> gx(xv.shape, S(0));
          for (int b = 0; b < B; ++b)
            for (int c = 0; c < C; ++c) {
              const S* go = gout.data.data() + (std::int64_t(b) * C + c) * H * W;
              const S* kk = kv.data.data() + c * 9;
              S* gi = gx.data.data() + (std::int64_t(b) * C + c) * H * W;
              for (int y = 0; y < H; ++y)
                for (int xx = 0; xx < W; ++xx) {
                  const S gv = go[y * W + xx];
                  for (int ky = -1; ky <= 1; ++ky) {
                    const int yy = y + ky;
                    if (yy < 0 || yy >= H) continue;
                    for (int kx = -1; kx <= 1; ++kx) {
                      const int xw = xx + kx;
                      if (xw < 0 || xw >= W) continue;
                      gi[yy * W + xw] += gv * kk[(ky + 1) * 3 + (kx + 1)];
                    }
                  }
                }
            }
          gr.accumulate(ix, gx);
        }
        if (ik >= 0) {
          Tensor<S> gk(kv.shape, S(0));
          for (int b = 0; b < B; ++b)
            for (int c = 0; c < C; ++c) {
              const S* go = gout.data.data() + (std::int64_t(b) * C + c) * H * W;
              const S* in = xv.data.data() + (std::int64_t(b) * C + c) * H * W;
              S* gw = gk.data.data() + c * 9;
              for (int y = 0; y < H; ++y)
                for (int xx = 0; xx < W; ++xx) {
                  const S gv = go[y * W + xx];
                  for (int ky = -1; ky <= 1; ++ky) {
                    const int yy = y + ky;
                    if (yy < 0 || yy >= H) continue;
                    for (int kx = -1; kx <= 1; ++kx) {
                      const int xw = xx + kx;
                      if (xw < 0 || xw >= W) continue;
                      gw[(ky + 1) * 3 + (kx + 1)] += gv * in[yy * W + xw];
                    }
                  }
                }
            }
          gr.accumulate(ik, gk);
        }
      };
      g->attach(out, g->add_op("depthwise3x3", {ix, ik}, out.shape, std::move(fn)));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// operator sugar

template <typename S>
Tensor<S> operator+(const Tensor<S>& a, const Tensor<S>& b) {
  return add(a, b);
}
template <typename S>
Tensor<S> operator-(const Tensor<S>& a, const Tensor<S>& b) {
  return sub(a, b);
}
template <typename S>
Tensor<S> operator*(const Tensor<S>& a, const Tensor<S>& b) {
  return mul(a, b);
}
template <typename S>
Tensor<S> operator*(const Tensor<S>& a, S c) {
  return mul_scalar(a, c);
}
template <typename S>
Tensor<S> operator*(S c, const Tensor<S>& a) {
  return mul_scalar(a, c);
}

}  // namespace umono
