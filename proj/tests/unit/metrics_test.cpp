#include <algorithm>
#include <cmath>
#include <random>

#include "doctest.h"
#include "preemptkit/dataset.hpp"
#include "preemptkit/metrics.hpp"
#include "support.hpp"

using namespace pk;
using support::flat;

namespace {

// Whole-image filtering formulation: blur a, b, a*a, b*b, a*b separably with
// the normalized Gaussian, then average the SSIM map over the valid region.
double ssim_oracle(const Tensor& a, const Tensor& b) {
  const Shape s = a.shape();
  const int k = 11;
  std::vector<double> g(k);
  double total = 0.0;
  for (int i = 0; i < k; ++i) {
    g[i] = std::exp(-((i - 5.0) * (i - 5.0)) / 4.5);
    total += g[i];
  }
  for (auto& v : g) v /= total;
  const int h = static_cast<int>(s.height), w = static_cast<int>(s.width);
  const int oh = h - k + 1, ow = w - k + 1;
  auto blur = [&](const std::vector<double>& img) {
    std::vector<double> rows(static_cast<std::size_t>(h * ow), 0.0);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < ow; ++x)
        for (int j = 0; j < k; ++j) rows[y * ow + x] += g[j] * img[y * w + x + j];
    std::vector<double> out(static_cast<std::size_t>(oh * ow), 0.0);
    for (int y = 0; y < oh; ++y)
      for (int x = 0; x < ow; ++x)
        for (int i = 0; i < k; ++i) out[y * ow + x] += g[i] * rows[(y + i) * ow + x];
    return out;
  };
  const double c1 = 1e-4, c2 = 9e-4;
  double sum = 0.0;
  for (std::size_t c = 0; c < s.channels; ++c) {
    std::vector<double> pa(h * w), pb(h * w), paa(h * w), pbb(h * w), pab(h * w);
    for (int i = 0; i < h * w; ++i) {
      pa[i] = a[c * h * w + i];
      pb[i] = b[c * h * w + i];
      paa[i] = pa[i] * pa[i];
      pbb[i] = pb[i] * pb[i];
      pab[i] = pa[i] * pb[i];
    }
    const auto ma = blur(pa), mb = blur(pb), maa = blur(paa), mbb = blur(pbb), mab = blur(pab);
    for (int i = 0; i < oh * ow; ++i) {
      const double va = maa[i] - ma[i] * ma[i], vb = mbb[i] - mb[i] * mb[i], cv = mab[i] - ma[i] * mb[i];
      sum += (2 * ma[i] * mb[i] + c1) * (2 * cv + c2) / ((ma[i] * ma[i] + mb[i] * mb[i] + c1) * (va + vb + c2));
    }
  }
  return sum / static_cast<double>(s.channels * oh * ow);
}

}  // namespace

TEST_CASE("ssim of an image with itself is exactly one") {
  std::mt19937_64 rng(31);
  for (int i = 0; i < 50; ++i) {
    const Tensor x = support::uniform_image(i % 2 ? Shape{3, 16, 16} : Shape{1, 12, 20}, rng);
    const auto r = ssim(x, x);
    CHECK(r.value == 1.0);
    CHECK_FALSE(r.fallback);
  }
}

TEST_CASE("ssim matches a filtering re-derivation") {
  std::mt19937_64 rng(32);
  for (int i = 0; i < 20; ++i) {
    const Shape shape = i % 2 ? Shape{3, 16, 16} : Shape{1, 13, 17};
    const Tensor a = support::uniform_image(shape, rng);
    Tensor b = a;
    std::normal_distribution<float> noise(0.0f, 0.05f * static_cast<float>(i + 1));
    for (std::size_t p = 0; p < b.size(); ++p) b[p] = std::clamp(b[p] + noise(rng), 0.0f, 1.0f);
    const double got = ssim(a, b).value;
    CHECK(got == doctest::Approx(ssim_oracle(a, b)).epsilon(1e-10));
    CHECK(got == doctest::Approx(ssim(b, a).value).epsilon(1e-12));
    CHECK(got < 1.0);
  }
}

TEST_CASE("ssim of black against white") {
  const Tensor black({1, 16, 16});
  const Tensor white({1, 16, 16}, 1.0f);
  // Only the luminance term differs from one: C1 / (1 + C1).
  CHECK(ssim(black, white).value == doctest::Approx(1e-4 / (1.0 + 1e-4)).epsilon(1e-9));
}

TEST_CASE("ssim falls back to global statistics for small images") {
  std::mt19937_64 rng(33);
  const Tensor a = support::uniform_image({1, 6, 6}, rng);
  const auto same = ssim(a, a);
  CHECK(same.fallback);
  CHECK(same.value == 1.0);
  const Tensor b = support::uniform_image({1, 6, 6}, rng);
  CHECK(ssim(a, b).value < 1.0);
  CHECK_THROWS_AS(ssim(a, support::uniform_image({1, 6, 7}, rng)), ShapeError);
}

TEST_CASE("perturbation grayscale endpoints") {
  for (double eps : {0.5, 0.25}) {
    const float e = static_cast<float>(eps);
    const Tensor one({1, 1, 3}, {-e, 0.0f, e});
    CHECK(perturbation_grayscale(one, eps) == Tensor({1, 1, 3}, {0.0f, 0.5f, 1.0f}));
    const Tensor three({3, 1, 3}, {-e, 0.0f, e, -e, 0.0f, e, -e, 0.0f, e});
    CHECK(perturbation_grayscale(three, eps) == Tensor({1, 1, 3}, {0.0f, 0.5f, 1.0f}));
  }
  const double eps = 8.0 / 255.0;
  const float e = static_cast<float>(eps);
  const Tensor g = perturbation_grayscale(Tensor({1, 1, 3}, {-e, 0.0f, e}), eps);
  CHECK(g == Tensor({1, 1, 3}, {0.0f, 0.5f, 1.0f}));

  // Pure red at +eps: 0.299 * 1 + 0.587 * 0.5 + 0.114 * 0.5.
  const Tensor red({3, 1, 1}, {0.5f, 0.0f, 0.0f});
  CHECK(perturbation_grayscale(red, 0.5)[0] == doctest::Approx(0.6495).epsilon(1e-6));

  CHECK_THROWS_AS(perturbation_grayscale(Tensor({1, 1, 1}), 0.0), ConfigError);
  CHECK_THROWS_AS(perturbation_grayscale(Tensor({2, 1, 1}), 0.1), ShapeError);
}

TEST_CASE("accuracy") {
  const Model id = support::identity_model(2);
  const std::vector<Tensor> xs{flat({0.9f, 0.1f}), flat({0.2f, 0.8f}), flat({0.6f, 0.4f}), flat({0.3f, 0.7f})};
  CHECK(accuracy(id, xs, std::vector<std::size_t>{0, 1, 0, 1}) == 1.0);
  CHECK(accuracy(id, xs, std::vector<std::size_t>{0, 1, 1, 0}) == 0.5);
  CHECK(accuracy(id, xs, std::vector<std::size_t>{1, 0, 1, 0}) == 0.0);
  CHECK_THROWS_AS(accuracy(id, std::vector<Tensor>{}, std::vector<std::size_t>{}), ConfigError);
  CHECK_THROWS_AS(accuracy(id, xs, std::vector<std::size_t>{0}), ShapeError);
}

TEST_CASE("evaluation without an attack") {
  SynthSpec spec;
  spec.classes = 3;
  spec.per_class = 5;
  const Dataset data = synth_dataset(spec, 4);
  const Model victim = Model::initialized(NetworkDef::reference(spec.image, 3, 2), 5);
  AttackBudget none = AttackBudget::evaluation(8.0 / 255.0);
  none.eps = 0.0;
  const auto r = clean_robust_eval(victim, data.images, data.labels, data.ids, data.images, none, {});
  CHECK(r.clean_original == r.robust_original);
  CHECK(r.clean_defended == r.robust_defended);
  CHECK(r.clean_original == r.clean_defended);
  CHECK(r.ssim_mean == 1.0);
  CHECK(r.ssim_min == 1.0);
  CHECK(r.mean_linf == 0.0);
  CHECK_FALSE(r.to_json().contains("timing"));

  EvalOptions same;
  same.backbone_fingerprint = weights_fingerprint(victim);
  CHECK_THROWS_AS(clean_robust_eval(victim, data.images, data.labels, data.ids, data.images, none, same),
                  ConfigError);
}
