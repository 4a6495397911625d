#pragma once

#include <cmath>
#include <cstdint>
#include <sstream>
#include <string>

#include "umono/ops.hpp"

namespace umono {

template <typename S>
struct LossConfig {
  S lambda = S(0.2);
  S mu = S(0.8);
  S alpha = S(10);
  S beta = S(0.85);
  bool l1 = false;       // alternate reading of the L2 term as mean |diff|
  S valid_eps = S(1e-3);  // pixels with gt below this are ignored
};

// 1 where gt exceeds the validity floor, 0 elsewhere. Plain value tensor.
template <typename S>
Tensor<S> valid_mask(const Tensor<S>& gt, S eps) {
  Tensor<S> m(gt.shape);
  for (std::size_t i = 0; i < m.data.size(); ++i) m.data[i] = gt.data[i] > eps ? S(1) : S(0);
  return m;
}

namespace detail {
template <typename S>
S mask_count(const Tensor<S>& mask) {
  S n = S(0);
  for (S v : mask.data) n += v;
  if (n <= S(0)) throw NumericError("loss: empty valid-pixel mask");
  return n;
}
}  // namespace detail

// Mean over valid pixels of the squared difference (or |diff| with the l1
// switch).
template <typename S>
Tensor<S> l2_loss(const Tensor<S>& pred, const Tensor<S>& gt, const Tensor<S>& mask,
                  bool l1 = false) {
  if (!pred.same_shape(gt) || !pred.same_shape(mask))
    throw ShapeError("l2_loss: shapes differ: " + shape_str(pred.shape) + " vs " +
                     shape_str(gt.shape));
  const S n = detail::mask_count(mask);
  Tensor<S> diff = mul(sub(pred, gt.detached()), mask);
  Tensor<S> total = l1 ? sum_all(absval(diff)) : sum_all(mul(diff, diff));
  return mul_scalar(total, S(1) / n);
}

// alpha * sqrt(mean(g^2) - beta * mean(g)^2), g = log(pred) - log(gt) over
// valid pixels. The radicand is clamped at zero.
template <typename S>
Tensor<S> silog_loss(const Tensor<S>& pred, const Tensor<S>& gt, const Tensor<S>& mask,
                     const LossConfig<S>& cfg) {
  if (!pred.same_shape(gt) || !pred.same_shape(mask))
    throw ShapeError("silog_loss: shapes differ: " + shape_str(pred.shape) + " vs " +
                     shape_str(gt.shape));
  const S n = detail::mask_count(mask);
  // keep logs finite on masked-out pixels; the mask zeroes them afterwards
  Tensor<S> gt_safe = gt.detached();
  for (std::size_t i = 0; i < gt_safe.data.size(); ++i) {
    if (mask.data[i] > S(0) && (gt_safe.data[i] <= S(0) || pred.data[i] <= S(0)))
      throw NumericError("silog_loss: nonpositive depth on a valid pixel");
    if (gt_safe.data[i] <= S(0)) gt_safe.data[i] = S(1);
  }
  // masked-out predictions may be arbitrary; pin them to 1 so log stays finite
  Tensor<S> one_minus_mask = mask.detached();
  for (auto& v : one_minus_mask.data) v = S(1) - v;
  Tensor<S> pred_safe = add(mul(pred, mask), one_minus_mask);
  Tensor<S> g = mul(sub(log(pred_safe), log(gt_safe)), mask);
  Tensor<S> m1 = mul_scalar(sum_all(g), S(1) / n);
  Tensor<S> m2 = mul_scalar(sum_all(mul(g, g)), S(1) / n);
  Tensor<S> radicand = relu(sub(m2, mul_scalar(mul(m1, m1), cfg.beta)));
  return mul_scalar(sqrt(add_scalar(radicand, S(1e-30))), cfg.alpha);
}

// lambda * L2 + mu * SILog
template <typename S>
Tensor<S> umono_loss(const Tensor<S>& pred, const Tensor<S>& gt, const Tensor<S>& mask,
                     const LossConfig<S>& cfg) {
  Tensor<S> l2 = l2_loss(pred, gt, mask, cfg.l1);
  Tensor<S> si = silog_loss(pred, gt, mask, cfg);
  return add(mul_scalar(l2, cfg.lambda), mul_scalar(si, cfg.mu));
}

// ---------------------------------------------------------------------------
// evaluation metrics

// Denominator of Abs Rel / Sq Rel: the usual convention divides by ground
// truth; `predicted` reproduces the literal formula of the source metrics
// table.
enum class MetricConvention { ground_truth, predicted };

struct MetricsReport {
  double delta1 = 0, delta2 = 0, delta3 = 0;
  double abs_rel = 0, sq_rel = 0, rmse = 0, log10 = 0;
  std::int64_t n = 0;

  std::string to_text() const {
    std::ostringstream os;
    os.precision(9);
    os << "delta1=" << delta1 << "\ndelta2=" << delta2 << "\ndelta3=" << delta3
       << "\nabs_rel=" << abs_rel << "\nsq_rel=" << sq_rel << "\nrmse=" << rmse
       << "\nlog10=" << log10 << "\nn=" << n << "\n";
    return os.str();
  }
};

// Pixel-weighted accumulation across any number of image pairs; aggregates
// in double regardless of the working precision.
class MetricsAccumulator {
 public:
  explicit MetricsAccumulator(MetricConvention conv = MetricConvention::ground_truth)
      : conv_(conv) {}

  template <typename S>
  void add(const Tensor<S>& pred, const Tensor<S>& gt, const Tensor<S>& mask) {
    if (!pred.same_shape(gt) || !pred.same_shape(mask))
      throw ShapeError("metrics: shapes differ: " + shape_str(pred.shape) + " vs " +
                       shape_str(gt.shape));
    for (std::size_t i = 0; i < pred.data.size(); ++i) {
      if (mask.data[i] <= S(0)) continue;
      const double d = static_cast<double>(pred.data[i]);
      const double dh = static_cast<double>(gt.data[i]);
      if (d <= 0 || dh <= 0) throw NumericError("metrics: nonpositive depth on a valid pixel");
      const double denom = conv_ == MetricConvention::ground_truth ? dh : d;
      const double diff = d - dh;
      abs_rel_ += std::abs(diff) / denom;
      sq_rel_ += diff * diff / denom;
      sq_ += diff * diff;
      log10_ += std::abs(std::log10(d) - std::log10(dh));
      const double ratio = std::max(d / dh, dh / d);
      if (ratio < 1.25) ++d1_;
      if (ratio < 1.25 * 1.25) ++d2_;
      if (ratio < 1.25 * 1.25 * 1.25) ++d3_;
      ++n_;
    }
  }

  MetricsReport finalize() const {
    if (n_ == 0) throw NumericError("metrics: no valid pixels");
    MetricsReport r;
    const double n = static_cast<double>(n_);
    r.delta1 = d1_ / n;
    r.delta2 = d2_ / n;
    r.delta3 = d3_ / n;
    r.abs_rel = abs_rel_ / n;
    r.sq_rel = sq_rel_ / n;
    r.rmse = std::sqrt(sq_ / n);
    r.log10 = log10_ / n;
    r.n = n_;
    return r;
  }

 private:
  MetricConvention conv_;
  double abs_rel_ = 0, sq_rel_ = 0, sq_ = 0, log10_ = 0;
  std::int64_t d1_ = 0, d2_ = 0, d3_ = 0, n_ = 0;
};

template <typename S>
MetricsReport compute_metrics(const Tensor<S>& pred, const Tensor<S>& gt, const Tensor<S>& mask,
                              MetricConvention conv = MetricConvention::ground_truth) {
  MetricsAccumulator acc(conv);
  acc.add(pred, gt, mask);
  return acc.finalize();
}

}  // namespace umono
