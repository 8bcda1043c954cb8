#include <cmath>
#include <random>

#include "doctest.h"
#include "preemptkit/tensor.hpp"
#include "support.hpp"

using namespace pk;
using support::flat;

TEST_CASE("sign maps zero to zero") {
  CHECK(sign(flat({0.3f, -0.2f, 0.0f})) == flat({1.0f, -1.0f, 0.0f}));
  CHECK(sign(flat({-0.0f}))[0] == 0.0f);
}

TEST_CASE("clamp01 clips to the pixel range") {
  CHECK(clamp01(flat({-0.1f, 0.5f, 1.2f})) == flat({0.0f, 0.5f, 1.0f}));
}

TEST_CASE("add zero is bit-identical") {
  const Tensor x = flat({0.1f, 0.7f, 1e-8f, 0.333333f});
  CHECK(add(x, 0.0f) == x);
  CHECK(add(x, Tensor(x.shape())) == x);
}

TEST_CASE("binary ops reject shape mismatch") {
  CHECK_THROWS_AS(add(flat({1.0f}), flat({1.0f, 2.0f})), ShapeError);
  CHECK_THROWS_AS(sub(flat({1.0f}), flat({1.0f, 2.0f})), ShapeError);
  CHECK_THROWS_AS(Tensor({1, 2, 2}, std::vector<float>(3)), ShapeError);
}

TEST_CASE("project_linf examples") {
  const double eps = 8.0 / 255.0;
  const Tensor out = project_linf(flat({0.5f}), flat({0.9f}), eps);
  CHECK(out[0] == doctest::Approx(0.5 + eps).epsilon(1e-7));
  CHECK(out[0] == doctest::Approx(0.53137).epsilon(1e-5));

  const Tensor inside = flat({0.51f, 0.49f});
  CHECK(project_linf(flat({0.5f, 0.5f}), inside, eps) == inside);

  CHECK(project_linf(flat({0.01f}), flat({-0.05f}), 0.1)[0] == 0.0f);
  CHECK_THROWS_AS(project_linf(flat({0.5f}), flat({0.5f}), 0.0), ConfigError);
}

TEST_CASE("project_l2 examples") {
  const Tensor ref = flat({0.5f, 0.5f});
  const Tensor small = flat({0.5f + 0.15f, 0.5f + 0.2f});  // norm 0.25
  CHECK(project_l2(ref, small, 0.5) == small);

  const Tensor far = flat({0.5f + 3.0f / 255.0f, 0.5f + 4.0f / 255.0f});
  const Tensor out = project_l2(ref, far, 1.0 / 255.0);
  CHECK(out[0] - 0.5f == doctest::Approx(3.0 / 255.0 / 5.0).epsilon(1e-5));
  CHECK(out[1] - 0.5f == doctest::Approx(4.0 / 255.0 / 5.0).epsilon(1e-5));

  CHECK(project_l2(ref, ref, 0.5) == ref);
}

TEST_CASE("projections are idempotent and land in the ball") {
  std::mt19937_64 rng(2024);
  std::uniform_real_distribution<double> eps_dist(1e-3, 0.3);
  for (int trial = 0; trial < 10000; ++trial) {
    const Shape shape{1, 2, 3};
    const Tensor ref = support::uniform_image(shape, rng);
    const Tensor cand = support::uniform_image(shape, rng, -0.5f, 1.5f);
    const double eps = eps_dist(rng);

    const Tensor p = project_linf(ref, cand, eps);
    REQUIRE(project_linf(ref, p, eps) == p);
    REQUIRE(linf_distance(p, ref) <= eps + 1e-6);

    const Tensor q = project_l2(ref, cand, eps);
    const Tensor qq = project_l2(ref, q, eps);
    REQUIRE(linf_distance(qq, q) <= 1e-6);
    REQUIRE(l2_distance(q, ref) <= eps + 1e-6);
    for (std::size_t i = 0; i < p.size(); ++i) {
      REQUIRE(p[i] >= 0.0f);
      REQUIRE(p[i] <= 1.0f);
      REQUIRE(q[i] >= 0.0f);
      REQUIRE(q[i] <= 1.0f);
    }
  }
}

TEST_CASE("softmax_ce oracle values") {
  SUBCASE("uniform logits give ln K") {
    const std::vector<double> z(10, 0.37);
    for (std::size_t label : {0u, 4u, 9u}) {
      CHECK(softmax_ce<double>(z, label).loss == doctest::Approx(2.302585092994046).epsilon(1e-12));
    }
  }
  SUBCASE("saturated logits") {
    const std::vector<double> z{100.0, 0.0};
    CHECK(softmax_ce<double>(z, 0).loss == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(std::isfinite(softmax_ce<double>(z, 1).loss));
  }
  SUBCASE("two-class example") {
    const std::vector<double> z{0.2, 0.8};
    const auto ce = softmax_ce<double>(z, 0);
    // 1 / (1 + e^{0.6}) and its complement, -ln of the former.
    CHECK(ce.probs[0] == doctest::Approx(0.3543436937742045).epsilon(1e-12));
    CHECK(ce.probs[1] == doctest::Approx(0.6456563062257955).epsilon(1e-12));
    CHECK(ce.loss == doctest::Approx(1.0374879504858856).epsilon(1e-12));
    const std::vector<float> zf{0.2f, 0.8f};
    CHECK(softmax_ce<float>(zf, 0).loss == doctest::Approx(1.0374879504858856).epsilon(1e-6));
  }
  SUBCASE("fewer than two logits is rejected") {
    const std::vector<double> z{1.0};
    CHECK_THROWS(softmax_ce<double>(z, 0));
  }
}

TEST_CASE("argmax takes the lowest index on ties") {
  const std::vector<float> a{0.9f, 0.1f};
  const std::vector<float> b{0.5f, 0.5f, 0.2f};
  const std::vector<float> c{0.1f, 0.7f, 0.7f};
  CHECK(argmax<float>(a) == 0);
  CHECK(argmax<float>(b) == 0);
  CHECK(argmax<float>(c) == 1);
}

TEST_CASE("finite differences") {
  const TensorD x({1, 1, 1}, std::vector<double>{3.0});
  const TensorD g = finite_diff_grad(
      [](const TensorD& t) {
        double s = 0.0;
        for (double v : t.data()) s += v * v;
        return s;
      },
      x, 1e-5);
  CHECK(g[0] == doctest::Approx(6.0).epsilon(1e-9));

  const TensorD y({1, 2, 2}, std::vector<double>{0.1, 0.2, 0.3, 0.4});
  const TensorD zero = finite_diff_grad([](const TensorD&) { return 4.2; }, y, 1e-5);
  for (double v : zero.data()) CHECK(v == 0.0);

  CHECK_THROWS_AS(finite_diff_grad([](const TensorD&) { return std::nan(""); }, y, 1e-5), NumericError);
}

TEST_CASE("distances and cosine") {
  const Tensor a = flat({0.0f, 0.0f, 0.0f});
  const Tensor b = flat({0.3f, -0.4f, 0.0f});
  CHECK(linf_distance(a, b) == doctest::Approx(0.4));
  CHECK(l2_distance(a, b) == doctest::Approx(0.5));
  CHECK(cosine_similarity(b, b) == doctest::Approx(1.0));
  CHECK(cosine_similarity(b, scale(b, -2.0f)) == doctest::Approx(-1.0));
  CHECK(cosine_similarity(a, b) == 0.0);
}
