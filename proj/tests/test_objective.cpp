#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "oracles.hpp"
#include "umono/gradcheck.hpp"
#include "umono/objective.hpp"

using namespace umono;
using D = Tensor<double>;

namespace {
D ones_like(const D& t) { return D::full(t.shape, 1.0); }
}  // namespace

TEST_CASE("l2_loss: zero at equality, analytic constant case, loop oracle") {
  Rng rng(3);
  D gt = oracle::random_tensor<double>({1, 4, 4}, rng, 0.1, 1.0);
  D mask = ones_like(gt);
  CHECK(l2_loss(gt, gt, mask).data[0] == doctest::Approx(0.0));

  D pred = gt;
  for (auto& v : pred.data) v += 0.5;
  CHECK(l2_loss(pred, gt, mask).data[0] == doctest::Approx(0.25).epsilon(1e-12));

  D p2 = oracle::random_tensor<double>({1, 4, 4}, rng, 0.1, 1.0);
  double want = 0;
  for (std::size_t i = 0; i < gt.data.size(); ++i)
    want += (p2.data[i] - gt.data[i]) * (p2.data[i] - gt.data[i]);
  want /= double(gt.numel());
  CHECK(l2_loss(p2, gt, mask).data[0] == doctest::Approx(want).epsilon(1e-12));

  // l1 switch
  double want1 = 0;
  for (std::size_t i = 0; i < gt.data.size(); ++i) want1 += std::abs(p2.data[i] - gt.data[i]);
  want1 /= double(gt.numel());
  CHECK(l2_loss(p2, gt, mask, true).data[0] == doctest::Approx(want1).epsilon(1e-12));

  D empty_mask = D::zeros(gt.shape);
  CHECK_THROWS_AS(l2_loss(p2, gt, empty_mask), NumericError);
}

TEST_CASE("l2_loss respects the mask") {
  D gt = D::from({4}, {1.0, 1.0, 0.0, 1.0});
  D pred = D::from({4}, {1.5, 1.0, 9.0, 1.0});
  D mask = valid_mask(gt, 1e-3);
  CHECK(mask.data == std::vector<double>{1, 1, 0, 1});
  CHECK(l2_loss(pred, gt, mask).data[0] == doctest::Approx(0.25 / 3).epsilon(1e-12));
}

TEST_CASE("silog_loss analytic cases") {
  LossConfig<double> cfg;
  Rng rng(5);
  D gt = oracle::random_tensor<double>({1, 6, 6}, rng, 0.2, 1.0);
  D mask = ones_like(gt);
  CHECK(silog_loss(gt, gt, mask, cfg).data[0] == doctest::Approx(0.0).epsilon(1e-9));

  // beta=1, pred = k*gt -> 0 for any k
  LossConfig<double> cfg1 = cfg;
  cfg1.beta = 1.0;
  for (double k : {0.5, 2.0, 10.0}) {
    D pred = gt;
    for (auto& v : pred.data) v *= k;
    CHECK(silog_loss(pred, gt, mask, cfg1).data[0] == doctest::Approx(0.0).epsilon(1e-6));
  }

  // beta=0.85, pred = k*gt -> alpha*|ln k|*sqrt(0.15)
  for (double k : {0.5, 2.0, 3.0}) {
    D pred = gt;
    for (auto& v : pred.data) v *= k;
    const double want = 10.0 * std::abs(std::log(k)) * std::sqrt(0.15);
    CHECK(silog_loss(pred, gt, mask, cfg).data[0] == doctest::Approx(want).epsilon(1e-9));
  }

  D bad = gt;
  bad.data[0] = -0.1;
  CHECK_THROWS_AS(silog_loss(bad, gt, mask, cfg), NumericError);
}

TEST_CASE("umono_loss composes the weighted parts") {
  LossConfig<double> cfg;
  Rng rng(7);
  D gt = oracle::random_tensor<double>({2, 5, 5}, rng, 0.2, 1.0);
  D pred = oracle::random_tensor<double>({2, 5, 5}, rng, 0.2, 1.0);
  D mask = ones_like(gt);
  const double l2 = l2_loss(pred, gt, mask, cfg.l1).data[0];
  const double si = silog_loss(pred, gt, mask, cfg).data[0];
  CHECK(umono_loss(pred, gt, mask, cfg).data[0] ==
        doctest::Approx(0.2 * l2 + 0.8 * si).epsilon(1e-12));

  LossConfig<double> only_l2 = cfg;
  only_l2.lambda = 1.0;
  only_l2.mu = 0.0;
  CHECK(umono_loss(pred, gt, mask, only_l2).data[0] == doctest::Approx(l2).epsilon(1e-12));

  CHECK(umono_loss(gt, gt, mask, cfg).data[0] == doctest::Approx(0.0).epsilon(1e-9));
}

TEST_CASE("loss gradients pass finite differences on random positive maps") {
  LossConfig<double> cfg;
  Rng rng(11);
  for (int trial = 0; trial < 10; ++trial) {
    D gt = oracle::random_tensor<double>({1, 4, 4}, rng, 0.2, 1.0);
    D pred = oracle::random_tensor<double>({1, 4, 4}, rng, 0.2, 1.0);
    D mask = ones_like(gt);
    CHECK(finite_diff_check(
              [&](Graph<double>&, const D& t) { return l2_loss(t, gt, mask, false); }, pred,
              1e-6) < 1e-6);
    CHECK(finite_diff_check(
              [&](Graph<double>&, const D& t) { return silog_loss(t, gt, mask, cfg); }, pred,
              1e-6) < 1e-5);
    CHECK(finite_diff_check(
              [&](Graph<double>&, const D& t) { return umono_loss(t, gt, mask, cfg); }, pred,
              1e-6) < 1e-5);
  }
}

TEST_CASE("losses are nonnegative and zero only at masked equality") {
  LossConfig<double> cfg;
  Rng rng(13);
  for (int trial = 0; trial < 20; ++trial) {
    D gt = oracle::random_tensor<double>({1, 3, 3}, rng, 0.2, 1.0);
    D pred = oracle::random_tensor<double>({1, 3, 3}, rng, 0.2, 1.0);
    D mask = ones_like(gt);
    CHECK(l2_loss(pred, gt, mask).data[0] >= 0.0);
    CHECK(silog_loss(pred, gt, mask, cfg).data[0] >= 0.0);
    bool equal = pred.data == gt.data;
    if (!equal) CHECK(l2_loss(pred, gt, mask).data[0] > 0.0);
  }
}

TEST_CASE("compute_metrics: perfect prediction and single-pixel analytic case") {
  Rng rng(17);
  D gt = oracle::random_tensor<double>({1, 8, 8}, rng, 0.1, 1.0);
  D mask = ones_like(gt);
  auto r = compute_metrics(gt, gt, mask);
  CHECK(r.delta1 == 1.0);
  CHECK(r.delta2 == 1.0);
  CHECK(r.delta3 == 1.0);
  CHECK(r.abs_rel == 0.0);
  CHECK(r.sq_rel == 0.0);
  CHECK(r.rmse == 0.0);
  CHECK(r.log10 == 0.0);
  CHECK(r.n == 64);

  D p1 = D::from({1}, {2.0}), g1 = D::from({1}, {1.0}), m1 = D::from({1}, {1.0});
  auto s = compute_metrics(p1, g1, m1, MetricConvention::ground_truth);
  CHECK(s.abs_rel == doctest::Approx(1.0));
  CHECK(s.sq_rel == doctest::Approx(1.0));
  CHECK(s.rmse == doctest::Approx(1.0));
  CHECK(s.log10 == doctest::Approx(std::log10(2.0)));
  CHECK(s.delta1 == 0.0);
  CHECK(s.delta2 == 0.0);
  CHECK(s.delta3 == 0.0);  // ratio 2 exceeds 1.25^3

  // predicted-denominator convention
  auto sp = compute_metrics(p1, g1, m1, MetricConvention::predicted);
  CHECK(sp.abs_rel == doctest::Approx(0.5));
  CHECK(sp.sq_rel == doctest::Approx(0.5));
}

TEST_CASE("compute_metrics matches the per-pixel loop oracle") {
  Rng rng(19);
  for (int trial = 0; trial < 50; ++trial) {
    D gt = oracle::random_tensor<double>({1, 32, 32}, rng, 0.05, 1.0);
    D pred = oracle::random_tensor<double>({1, 32, 32}, rng, 0.05, 1.0);
    D mask = ones_like(gt);
    for (auto conv : {MetricConvention::ground_truth, MetricConvention::predicted}) {
      auto got = compute_metrics(pred, gt, mask, conv);
      auto s = oracle::metrics(pred, gt, mask, conv == MetricConvention::ground_truth);
      const double n = double(s.n);
      CHECK(std::abs(got.abs_rel - s.abs_rel / n) < 1e-9);
      CHECK(std::abs(got.sq_rel - s.sq_rel / n) < 1e-9);
      CHECK(std::abs(got.rmse - std::sqrt(s.sq / n)) < 1e-9);
      CHECK(std::abs(got.log10 - s.log10 / n) < 1e-9);
      CHECK(got.delta1 == doctest::Approx(double(s.d1) / n));
      CHECK(got.delta2 == doctest::Approx(double(s.d2) / n));
      CHECK(got.delta3 == doctest::Approx(double(s.d3) / n));
      CHECK(got.delta1 <= got.delta2);
      CHECK(got.delta2 <= got.delta3);
    }
  }
}

TEST_CASE("metric symmetry: rmse/log10/deltas symmetric, rel metrics not") {
  Rng rng(23);
  D a = oracle::random_tensor<double>({1, 16, 16}, rng, 0.1, 1.0);
  D b = oracle::random_tensor<double>({1, 16, 16}, rng, 0.1, 1.0);
  D mask = ones_like(a);
  auto ab = compute_metrics(a, b, mask);
  auto ba = compute_metrics(b, a, mask);
  CHECK(ab.rmse == doctest::Approx(ba.rmse).epsilon(1e-12));
  CHECK(ab.log10 == doctest::Approx(ba.log10).epsilon(1e-12));
  CHECK(ab.delta1 == doctest::Approx(ba.delta1));
  CHECK(ab.delta2 == doctest::Approx(ba.delta2));
  CHECK(ab.delta3 == doctest::Approx(ba.delta3));
  CHECK(ab.abs_rel != doctest::Approx(ba.abs_rel).epsilon(1e-12));
}

TEST_CASE("metrics accumulator aggregates pixel-weighted across images") {
  Rng rng(29);
  D g1 = oracle::random_tensor<double>({1, 4, 4}, rng, 0.1, 1.0);
  D g2 = oracle::random_tensor<double>({1, 8, 8}, rng, 0.1, 1.0);
  D p1 = oracle::random_tensor<double>({1, 4, 4}, rng, 0.1, 1.0);
  D p2 = oracle::random_tensor<double>({1, 8, 8}, rng, 0.1, 1.0);
  MetricsAccumulator acc;
  acc.add(p1, g1, ones_like(g1));
  acc.add(p2, g2, ones_like(g2));
  auto r = acc.finalize();
  auto s1 = oracle::metrics(p1, g1, ones_like(g1), true);
  auto s2 = oracle::metrics(p2, g2, ones_like(g2), true);
  const double n = double(s1.n + s2.n);
  CHECK(r.n == s1.n + s2.n);
  CHECK(r.abs_rel == doctest::Approx((s1.abs_rel + s2.abs_rel) / n).epsilon(1e-12));
  CHECK(r.rmse == doctest::Approx(std::sqrt((s1.sq + s2.sq) / n)).epsilon(1e-12));

  CHECK_THROWS_AS(MetricsAccumulator().finalize(), NumericError);
}

TEST_CASE("metrics report serializes one key per line in table order") {
  MetricsReport r;
  r.delta1 = 0.5;
  r.delta2 = 0.6;
  r.delta3 = 0.7;
  r.abs_rel = 0.1;
  r.sq_rel = 0.02;
  r.rmse = 0.12;
  r.log10 = 0.05;
  r.n = 100;
  const std::string text = r.to_text();
  CHECK(text ==
        "delta1=0.5\ndelta2=0.6\ndelta3=0.7\nabs_rel=0.1\nsq_rel=0.02\nrmse=0.12\nlog10=0.05\nn="
        "100\n");
}
