#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "oracles.hpp"
#include "umono/gradcheck.hpp"
#include "umono/graph.hpp"
#include "umono/ops.hpp"

using namespace umono;
using D = Tensor<double>;

TEST_CASE("matmul identity and zero") {
  Rng rng(7);
  D eye({3, 3});
  for (int i = 0; i < 3; ++i) eye.at({i, i}) = 1.0;
  D b = oracle::random_tensor<double>({3, 2}, rng);
  D out = matmul(eye, b);
  for (std::size_t i = 0; i < b.data.size(); ++i) CHECK(out.data[i] == doctest::Approx(b.data[i]));

  D z({4, 3});
  D out2 = matmul(z, b);
  for (double v : out2.data) CHECK(v == 0.0);
}

TEST_CASE("matmul matches naive triple loop") {
  Rng rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    D a = oracle::random_tensor<double>({5, 4}, rng);
    D b = oracle::random_tensor<double>({4, 3}, rng);
    D got = matmul(a, b);
    D want = oracle::matmul(a, b);
    for (std::size_t i = 0; i < got.data.size(); ++i)
      CHECK(got.data[i] == doctest::Approx(want.data[i]).epsilon(1e-12));
  }
}

TEST_CASE("matmul shape error names both shapes") {
  D a({5, 4}), b({3, 2});
  CHECK_THROWS_WITH_AS(matmul(a, b), doctest::Contains("[5x4]"), ShapeError);
}

TEST_CASE("softmax analytic cases") {
  D x = D::from({3}, {0.0, 0.0, 0.0});
  D y = softmax(x, 0);
  for (double v : y.data) CHECK(v == doctest::Approx(1.0 / 3));

  D x2 = D::from({2}, {0.0, std::log(2.0)});
  D y2 = softmax(x2, 0);
  CHECK(y2.data[0] == doctest::Approx(1.0 / 3));
  CHECK(y2.data[1] == doctest::Approx(2.0 / 3));
}

TEST_CASE("softmax matches naive oracle and rows sum to 1") {
  Rng rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    D x = oracle::random_tensor<double>({7}, rng, -4, 4);
    D y = softmax(x, 0);
    auto want = oracle::softmax_vec(x.data);
    double sum = 0;
    for (std::size_t i = 0; i < y.data.size(); ++i) {
      CHECK(y.data[i] == doctest::Approx(want[i]).epsilon(1e-6));
      CHECK(y.data[i] > 0);
      sum += y.data[i];
    }
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-6));
  }
}

TEST_CASE("softmax is permutation-equivariant") {
  Rng rng(5);
  D x = oracle::random_tensor<double>({6}, rng, -3, 3);
  D y = softmax(x, 0);
  std::vector<int> perm{3, 1, 5, 0, 2, 4};
  D xp({6});
  for (int i = 0; i < 6; ++i) xp.data[i] = x.data[perm[i]];
  D yp = softmax(xp, 0);
  for (int i = 0; i < 6; ++i) CHECK(yp.data[i] == doctest::Approx(y.data[perm[i]]).epsilon(1e-12));
}

TEST_CASE("softmax over middle axis") {
  Rng rng(9);
  D x = oracle::random_tensor<double>({2, 5, 3}, rng, -2, 2);
  D y = softmax(x, 1);
  for (int b = 0; b < 2; ++b)
    for (int j = 0; j < 3; ++j) {
      double s = 0;
      for (int i = 0; i < 5; ++i) s += y.at({b, i, j});
      CHECK(s == doctest::Approx(1.0).epsilon(1e-9));
    }
}

TEST_CASE("backward of x^2 at x=3 gives 6") {
  Graph<double> g;
  D x = D::scalar(3.0);
  g.watch(x);
  D loss = mul(x, x);
  g.backward(loss);
  CHECK(g.grad(x).data[0] == doctest::Approx(6.0));
}

TEST_CASE("backward of sum(A*B) gives ones*B^T") {
  Rng rng(13);
  D a = oracle::random_tensor<double>({3, 4}, rng);
  D b = oracle::random_tensor<double>({4, 2}, rng);
  Graph<double> g;
  g.watch(a);
  D loss = sum_all(matmul(a, b));
  g.backward(loss);
  D ga = g.grad(a);
  // d/dA sum(A B) = ones(m,n) B^T
  for (int i = 0; i < 3; ++i)
    for (int p = 0; p < 4; ++p) {
      double want = 0;
      for (int j = 0; j < 2; ++j) want += b.at({p, j});
      CHECK(ga.at({i, p}) == doctest::Approx(want).epsilon(1e-12));
    }
}

TEST_CASE("backward error cases") {
  Graph<double> g;
  D x = D::from({2}, {1.0, 2.0});
  g.watch(x);
  D y = mul(x, x);
  CHECK_THROWS_AS(g.backward(y), NumericError);  // non-scalar
  D detached = D::scalar(1.0);
  CHECK_THROWS_AS(g.backward(detached), NumericError);
  D loss = sum_all(y);
  g.backward(loss);
  CHECK_THROWS_AS(g.backward(loss), NumericError);  // second call without reset
  g.reset();
  CHECK(g.size() == 0);
}

TEST_CASE("gradient accumulates when a tensor is used twice") {
  Graph<double> g;
  D x = D::scalar(2.0);
  g.watch(x);
  D y = add(mul(x, x), x);  // x^2 + x -> 2x + 1 = 5
  g.backward(y);
  CHECK(g.grad(x).data[0] == doctest::Approx(5.0));
}

TEST_CASE("finite_diff_check on linear and quadratic functions") {
  Rng rng(17);
  D x = oracle::random_tensor<double>({3, 4}, rng);
  auto f_sum = [](Graph<double>&, const D& t) { return sum_all(t); };
  CHECK(finite_diff_check(f_sum, x, 1e-4) < 1e-9);
  auto f_sq = [](Graph<double>&, const D& t) { return sum_all(mul(t, t)); };
  CHECK(finite_diff_check(f_sq, x, 1e-4) < 1e-6);
}

TEST_CASE("finite differences validate every primitive op") {
  Rng rng(23);
  const double step = 1e-5, tol = 1e-6;
  for (int trial = 0; trial < 20; ++trial) {
    D x = oracle::random_tensor<double>({2, 3, 4}, rng, 0.2, 2.0);  // positive for log/sqrt
    D y = oracle::random_tensor<double>({2, 3, 4}, rng, 0.5, 1.5);
    auto fd = [&](auto f) { return finite_diff_check(f, x, step); };

    CHECK(fd([&](Graph<double>&, const D& t) { return sum_all(add(t, y)); }) < tol);
    CHECK(fd([&](Graph<double>&, const D& t) { return sum_all(sub(t, y)); }) < tol);
    CHECK(fd([&](Graph<double>&, const D& t) { return sum_all(mul(t, y)); }) < tol);
    CHECK(fd([&](Graph<double>&, const D& t) { return sum_all(divide(t, y)); }) < tol);
    CHECK(fd([&](Graph<double>&, const D& t) { return sum_all(divide(y, t)); }) < tol);
    CHECK(fd([&](Graph<double>&, const D& t) { return sum_all(exp(t)); }) < tol);
    CHECK(fd([&](Graph<double>&, const D& t) { return sum_all(log(t)); }) < tol);
    CHECK(fd([&](Graph<double>&, const D& t) { return sum_all(sqrt(t)); }) < tol);
    // keep inputs away from the relu kink so central differences are valid
    D xr = x;
    for (auto& v : xr.data)
      if (std::abs(v - 1.1) < 1e-3) v += 2e-3;
    CHECK(finite_diff_check(
              [&](Graph<double>&, const D& t) { return sum_all(relu(add_scalar(t, -1.1))); }, xr,
              step) < tol);
    CHECK(fd([&](Graph<double>&, const D& t) { return sum_all(sigmoid(t)); }) < tol);
    CHECK(fd([&](Graph<double>&, const D& t) { return sum_all(pow_scalar(t, 1.7)); }) < tol);
    CHECK(fd([&](Graph<double>&, const D& t) { return mean_all(mul(t, t)); }) < tol);
    CHECK(fd([&](Graph<double>&, const D& t) {
            return sum_all(mul(sum_axes(t, {0, 2}, true), sum_axes(t, {1}, true)));
          }) < tol);
    CHECK(fd([&](Graph<double>&, const D& t) {
            return sum_all(mul(softmax(t, 1), y));
          }) < tol);
    CHECK(fd([&](Graph<double>&, const D& t) {
            return sum_all(mul(permute(t, {2, 0, 1}), permute(y, {2, 0, 1})));
          }) < tol);
    CHECK(fd([&](Graph<double>&, const D& t) {
            return sum_all(mul(reshape(t, {6, 4}), reshape(y, {6, 4})));
          }) < tol);
    CHECK(fd([&](Graph<double>&, const D& t) {
            return sum_all(mul(concat<double>({t, y}, 1), concat<double>({y, t}, 1)));
          }) < tol);
  }
}

TEST_CASE("finite differences validate matmul/bmm and broadcast binaries") {
  Rng rng(29);
  const double tol = 1e-6;
  for (int trial = 0; trial < 20; ++trial) {
    D a = oracle::random_tensor<double>({3, 4}, rng);
    D b = oracle::random_tensor<double>({4, 2}, rng);
    CHECK(finite_diff_check(
              [&](Graph<double>&, const D& t) { return sum_all(mul(matmul(t, b), matmul(t, b))); },
              a, 1e-5) < tol);
    CHECK(finite_diff_check(
              [&](Graph<double>&, const D& t) { return sum_all(mul(matmul(a, t), matmul(a, t))); },
              b, 1e-5) < tol);

    D p = oracle::random_tensor<double>({2, 3, 4}, rng);
    D q = oracle::random_tensor<double>({2, 4, 5}, rng);
    CHECK(finite_diff_check(
              [&](Graph<double>&, const D& t) { return sum_all(mul(bmm(t, q), bmm(t, q))); }, p,
              1e-5) < tol);
    CHECK(finite_diff_check(
              [&](Graph<double>&, const D& t) { return sum_all(mul(bmm(p, t), bmm(p, t))); }, q,
              1e-5) < tol);

    // broadcast over leading and middle dims
    D big = oracle::random_tensor<double>({2, 3, 4}, rng);
    D row = oracle::random_tensor<double>({4}, rng);
    D mid = oracle::random_tensor<double>({2, 1, 4}, rng);
    CHECK(finite_diff_check(
              [&](Graph<double>&, const D& t) { return sum_all(mul(add(big, t), add(big, t))); },
              row, 1e-5) < tol);
    CHECK(finite_diff_check(
              [&](Graph<double>&, const D& t) { return sum_all(mul(mul(big, t), mul(big, t))); },
              mid, 1e-5) < tol);
    CHECK(finite_diff_check(
              [&](Graph<double>&, const D& t) { return sum_all(mul(sub(t, mid), sub(t, mid))); },
              big, 1e-5) < tol);
  }
}

TEST_CASE("broadcast shape rules") {
  D a({2, 3, 4}), b({3, 1});
  D c = add(a, b);
  CHECK(c.shape == std::vector<int>{2, 3, 4});
  D bad({5});
  CHECK_THROWS_AS(add(a, bad), ShapeError);
}

TEST_CASE("forward results are bit-identical across repeated runs") {
  Rng rng(31);
  D a = oracle::random_tensor<double>({8, 8}, rng);
  D b = oracle::random_tensor<double>({8, 8}, rng);
  D r1 = matmul(softmax(a, 1), b);
  D r2 = matmul(softmax(a, 1), b);
  CHECK(r1.data == r2.data);
}

TEST_CASE("finite check flags NaN producing ops") {
  set_finite_checks(true);
  D x = D::from({2}, {-1.0, 4.0});
  CHECK_THROWS_AS(umono::sqrt(x), NumericError);  // sqrt(-1) = NaN
  D y = D::from({1}, {800.0});
  CHECK_THROWS_AS(umono::exp(y), NumericError);  // overflow to inf
}

TEST_CASE("tensors detach safely when their graph dies") {
  D x = D::scalar(2.0);
  {
    Graph<double> g;
    g.watch(x);
    D y = mul(x, x);
    g.backward(sum_all(y));
  }
  // stale linkage: ops must treat x as a constant now
  D z = mul(x, x);
  CHECK(z.data[0] == doctest::Approx(4.0));
  Graph<double> g2;
  CHECK_THROWS_AS(g2.grad(x), NumericError);
}

TEST_CASE("float precision finite differences stay under loose tolerance") {
  Rng rng(37);
  using F = Tensor<float>;
  for (int trial = 0; trial < 5; ++trial) {
    F x = oracle::random_tensor<float>({3, 3}, rng, 0.5, 1.5);
    auto f = [](Graph<float>&, const F& t) { return sum_all(mul(sigmoid(t), t)); };
    CHECK(finite_diff_check(f, x, 1e-2f, 1e-6f) < 1e-3f);
  }
}
