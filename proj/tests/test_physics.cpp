#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "oracles.hpp"
#include "umono/physics.hpp"

using namespace umono;
using D = Tensor<double>;

TEST_CASE("depth_to_transmission basics") {
  D zero({1, 2, 2});
  auto t = depth_to_transmission(zero, 0.7);
  for (double v : t.t.data) CHECK(v == doctest::Approx(1.0));

  D one = D::full({1, 2, 2}, 1.0);
  auto t2 = depth_to_transmission(one, std::log(2.0));
  for (double v : t2.t.data) CHECK(v == doctest::Approx(0.5).epsilon(1e-12));

  Rng rng(3);
  D d = oracle::random_tensor<double>({1, 4, 4}, rng, 0.0, 2.0);
  auto t3 = depth_to_transmission(d, 0.9);
  for (std::size_t i = 0; i < d.data.size(); ++i)
    CHECK(t3.t.data[i] == doctest::Approx(std::exp(-0.9 * d.data[i])).epsilon(1e-12));

  D neg = D::from({1, 1, 1}, {-0.5});
  CHECK_THROWS_AS(depth_to_transmission(neg, 0.5), NumericError);
  CHECK_THROWS_AS(depth_to_transmission(one, -0.1), NumericError);
}

TEST_CASE("transmission_to_depth inverts and validates") {
  D ones = D::full({1, 2, 2}, 1.0);
  D d = transmission_to_depth(ones, 0.8);
  for (double v : d.data) CHECK(v == doctest::Approx(0.0));

  D half = D::full({1, 1, 1}, 0.5);
  D d2 = transmission_to_depth(half, std::log(2.0));
  CHECK(d2.data[0] == doctest::Approx(1.0).epsilon(1e-12));

  Rng rng(5);
  D depth = oracle::random_tensor<double>({1, 6, 6}, rng, 0.0, 3.0);
  auto t = depth_to_transmission(depth, 1.3);
  D back = transmission_to_depth(t.t, 1.3);
  for (std::size_t i = 0; i < depth.data.size(); ++i)
    CHECK(std::abs(back.data[i] - depth.data[i]) < 1e-6);

  D zero = D::from({1, 1, 1}, {0.0});
  CHECK_THROWS_AS(transmission_to_depth(zero, 1.0), NumericError);

  const auto before = transmission_clamp_count().load();
  D over = D::from({1, 1, 1}, {1.0 + 1e-9});
  D d3 = transmission_to_depth(over, 1.0);
  CHECK(d3.data[0] == doctest::Approx(0.0));
  CHECK(transmission_clamp_count().load() == before + 1);
}

TEST_CASE("synthesize_underwater analytic cases") {
  FormationParams<double> p;
  p.beta = {std::log(2.0), std::log(2.0), std::log(2.0)};
  p.ambient = {0.2, 0.2, 0.2};

  SyntheticScene<double> s;
  s.albedo = D::full({3, 2, 2}, 0.8);
  s.depth = D::zeros({1, 2, 2});
  D img = synthesize_underwater(s, p);
  for (std::size_t i = 0; i < img.data.size(); ++i) CHECK(img.data[i] == 0.8);  // T=1 -> J exactly

  s.depth = D::full({1, 2, 2}, 1.0);
  D img2 = synthesize_underwater(s, p);
  for (double v : img2.data) CHECK(v == doctest::Approx(0.5).epsilon(1e-12));

  s.depth = D::full({1, 2, 2}, 60.0);  // T ~= 0 -> ambient
  D img3 = synthesize_underwater(s, p);
  for (double v : img3.data) CHECK(v == doctest::Approx(0.2).epsilon(1e-9));
}

TEST_CASE("synthesize output stays in [0,1] for J,A in [0,1]") {
  Rng rng(7);
  FormationParams<double> p;
  for (int trial = 0; trial < 10; ++trial) {
    SyntheticScene<double> s;
    s.albedo = oracle::random_tensor<double>({3, 4, 4}, rng, 0.0, 1.0);
    s.depth = oracle::random_tensor<double>({1, 4, 4}, rng, 0.0, 5.0);
    D img = synthesize_underwater(s, p);
    for (double v : img.data) {
      CHECK(v >= 0.0);
      CHECK(v <= 1.0);
    }
  }
}

TEST_CASE("udcp trivial extremes") {
  std::array<double, 3> ambient{0.3, 0.5, 0.6};
  D img({3, 4, 4});
  const std::int64_t n = 16;
  // G and B exactly at ambient -> dark value 1 -> T = 0, clamped to t_min
  for (std::int64_t i = 0; i < n; ++i) {
    img.data[static_cast<std::size_t>(n + i)] = 0.5;
    img.data[static_cast<std::size_t>(2 * n + i)] = 0.6;
  }
  auto t = estimate_transmission_udcp(img, 1, ambient, 0.05);
  for (double v : t.t.data) CHECK(v == doctest::Approx(0.05));

  // G = B = 0 -> T = 1
  D img2({3, 4, 4});
  auto t2 = estimate_transmission_udcp(img2, 1, ambient, 0.05);
  for (double v : t2.t.data) CHECK(v == doctest::Approx(1.0));

  CHECK_THROWS_AS(estimate_transmission_udcp(img, 1, {0.3, 0.0, 0.6}, 0.05), NumericError);
}

TEST_CASE("udcp matches the brute-force patch-scan oracle") {
  Rng rng(11);
  std::array<double, 3> ambient{0.4, 0.55, 0.65};
  for (int trial = 0; trial < 10; ++trial) {
    D img = oracle::random_tensor<double>({3, 9, 7}, rng, 0.0, 1.0);
    auto got = estimate_transmission_udcp(img, 1, ambient, 0.05);
    D want = oracle::udcp(img, 1, ambient[1], ambient[2], 0.05);
    for (std::size_t i = 0; i < want.data.size(); ++i)
      CHECK(got.t.data[i] == doctest::Approx(want.data[i]).epsilon(1e-12));
  }
  // larger patch
  D img = oracle::random_tensor<double>({3, 16, 16}, rng, 0.0, 1.0);
  auto got = estimate_transmission_udcp(img, 7, ambient, 0.05);
  D want = oracle::udcp(img, 7, ambient[1], ambient[2], 0.05);
  for (std::size_t i = 0; i < want.data.size(); ++i)
    CHECK(got.t.data[i] == doctest::Approx(want.data[i]).epsilon(1e-12));
}

TEST_CASE("udcp estimate is monotone under pointwise-increasing G/B") {
  Rng rng(13);
  std::array<double, 3> ambient{0.4, 0.5, 0.6};
  D img = oracle::random_tensor<double>({3, 8, 8}, rng, 0.0, 0.6);
  D brighter = img;
  const std::int64_t n = 64;
  for (std::int64_t i = n; i < 3 * n; ++i)
    brighter.data[static_cast<std::size_t>(i)] += 0.2;
  auto t0 = estimate_transmission_udcp(img, 2, ambient, 0.05);
  auto t1 = estimate_transmission_udcp(brighter, 2, ambient, 0.05);
  for (std::size_t i = 0; i < t0.t.data.size(); ++i) CHECK(t1.t.data[i] <= t0.t.data[i] + 1e-12);
}

TEST_CASE("estimate_ambient: constant image, bright pixel, sorting oracle") {
  D cst({3, 8, 8});
  for (std::int64_t i = 0; i < 64; ++i) {
    cst.data[static_cast<std::size_t>(i)] = 0.25;
    cst.data[static_cast<std::size_t>(64 + i)] = 0.45;
    cst.data[static_cast<std::size_t>(128 + i)] = 0.65;
  }
  auto a = estimate_ambient(cst);
  CHECK(a[0] == doctest::Approx(0.25));
  CHECK(a[1] == doctest::Approx(0.45));
  CHECK(a[2] == doctest::Approx(0.65));

  // single bright pixel dominates the 0.1% selection
  D img({3, 16, 16});
  for (auto& v : img.data) v = 0.1;
  img.at({0, 5, 7}) = 0.9;
  img.at({1, 5, 7}) = 0.8;
  img.at({2, 5, 7}) = 0.7;
  auto a2 = estimate_ambient(img);
  CHECK(a2[0] == doctest::Approx(0.9));
  CHECK(a2[1] == doctest::Approx(0.8));
  CHECK(a2[2] == doctest::Approx(0.7));

  // top-k mean oracle on a larger random image
  Rng rng(17);
  D big = oracle::random_tensor<double>({3, 64, 64}, rng, 0.0, 1.0);
  auto a3 = estimate_ambient(big);
  const std::int64_t n = 64 * 64;
  std::vector<std::pair<double, std::int64_t>> scored;
  for (std::int64_t i = 0; i < n; ++i)
    scored.push_back({std::min(big.data[static_cast<std::size_t>(n + i)],
                               big.data[static_cast<std::size_t>(2 * n + i)]),
                      i});
  std::stable_sort(scored.begin(), scored.end(), [](const auto& x, const auto& y) {
    return x.first > y.first;
  });
  const std::int64_t take = std::max<std::int64_t>(1, (n + 500) / 1000);
  std::array<double, 3> want{0, 0, 0};
  for (std::int64_t k = 0; k < take; ++k)
    for (int c = 0; c < 3; ++c)
      want[static_cast<std::size_t>(c)] +=
          big.data[static_cast<std::size_t>(c * n + scored[static_cast<std::size_t>(k)].second)];
  for (int c = 0; c < 3; ++c) {
    want[static_cast<std::size_t>(c)] /= static_cast<double>(take);
    CHECK(a3[static_cast<std::size_t>(c)] ==
          doctest::Approx(want[static_cast<std::size_t>(c)]).epsilon(1e-12));
  }
}

TEST_CASE("generate_scene is deterministic per seed and kind-shaped") {
  for (auto kind : {SceneKind::ramp, SceneKind::boxes, SceneKind::spheres, SceneKind::constant}) {
    auto s1 = generate_scene<double>(99, 64, 64, kind);
    auto s2 = generate_scene<double>(99, 64, 64, kind);
    CHECK(s1.albedo.data == s2.albedo.data);
    CHECK(s1.depth.data == s2.depth.data);
    auto s3 = generate_scene<double>(100, 64, 64, kind);
    CHECK(s1.albedo.data != s3.albedo.data);
    for (double v : s1.depth.data) {
      CHECK(v >= 0.05);
      CHECK(v <= 1.0);
    }
    for (double v : s1.albedo.data) {
      CHECK(v >= 0.0);
      CHECK(v <= 1.0);
    }
  }
  // ramp depth strictly monotone along x
  auto ramp = generate_scene<double>(7, 64, 64, SceneKind::ramp);
  for (int y = 0; y < 64; ++y)
    for (int x = 1; x < 64; ++x)
      CHECK(ramp.depth.at({0, y, x}) > ramp.depth.at({0, y, x - 1}));
}

TEST_CASE("every 15x15 patch of every scene kind contains a G/B-dark pixel") {
  for (auto kind : {SceneKind::ramp, SceneKind::boxes, SceneKind::spheres}) {
    auto s = generate_scene<double>(41, 64, 64, kind);
    const int H = 64, W = 64;
    for (int y0 = 0; y0 + 15 <= H; ++y0)
      for (int x0 = 0; x0 + 15 <= W; ++x0) {
        bool found = false;
        for (int y = y0; y < y0 + 15 && !found; ++y)
          for (int x = x0; x < x0 + 15 && !found; ++x)
            if (std::min(s.albedo.at({1, y, x}), s.albedo.at({2, y, x})) < 0.02) found = true;
        if (!found) {
          CHECK(found);  // report the failing window once
          return;
        }
      }
    CHECK(true);
  }
}

TEST_CASE("udcp is exact on dark-pixel scenes with locally constant depth") {
  FormationParams<double> p;
  p.beta = {0.6, 0.8, 0.8};  // equal G/B attenuation
  p.ambient = {0.2, 0.5, 0.6};
  auto scene = generate_scene<double>(123, 64, 64, SceneKind::constant);
  D img = synthesize_underwater(scene, p);
  auto est = estimate_transmission_udcp(img, 7, p.ambient, 0.05);
  auto truth = depth_to_transmission(scene.depth, 0.8);
  for (std::size_t i = 0; i < est.t.data.size(); ++i)
    CHECK(std::abs(est.t.data[i] - truth.t.data[i]) < 1e-6);
}
