#include "preemptkit/metrics.hpp"

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <iomanip>
#include <limits>
#include <numeric>
#include <sstream>

#include "preemptkit/parallel.hpp"

namespace pk {

double accuracy(const Model& model, std::span<const Tensor> images, std::span<const std::size_t> labels) {
  if (images.empty()) throw ConfigError("accuracy: empty set");
  if (images.size() != labels.size()) throw ShapeError("accuracy: images and labels differ in length");
  std::vector<std::uint8_t> hit(images.size());
  parallel_for(images.size(), [&](std::size_t i) { hit[i] = model.predict(images[i]) == labels[i] ? 1 : 0; });
  const auto correct = std::accumulate(hit.begin(), hit.end(), std::size_t{0});
  return static_cast<double>(correct) / static_cast<double>(images.size());
}

namespace {

constexpr std::size_t kWindow = 11;
constexpr double kSigma = 1.5;
constexpr double kC1 = (0.01 * 1.0) * (0.01 * 1.0);
constexpr double kC2 = (0.03 * 1.0) * (0.03 * 1.0);

std::array<double, kWindow> gaussian_window() {
  std::array<double, kWindow> w{};
  double sum = 0.0;
  for (std::size_t i = 0; i < kWindow; ++i) {
    const double d = static_cast<double>(i) - static_cast<double>(kWindow / 2);
    w[i] = std::exp(-d * d / (2.0 * kSigma * kSigma));
    sum += w[i];
  }
  for (double& v : w) v /= sum;
  return w;
}

double ssim_formula(double mu_a, double mu_b, double var_a, double var_b, double cov) {
  return ((2.0 * mu_a * mu_b + kC1) * (2.0 * cov + kC2)) / ((mu_a * mu_a + mu_b * mu_b + kC1) * (var_a + var_b + kC2));
}

}  // namespace

SsimResult ssim(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) throw ShapeError("ssim: shape mismatch");
  const Shape s = a.shape();
  if (s.size() == 0) throw ShapeError("ssim: empty images");
  const std::size_t plane = s.height * s.width;

  if (s.height < kWindow || s.width < kWindow) {
    double total = 0.0;
    for (std::size_t c = 0; c < s.channels; ++c) {
      double ma = 0.0, mb = 0.0;
      for (std::size_t i = 0; i < plane; ++i) {
        ma += a[c * plane + i];
        mb += b[c * plane + i];
      }
      ma /= static_cast<double>(plane);
      mb /= static_cast<double>(plane);
      double va = 0.0, vb = 0.0, cov = 0.0;
      for (std::size_t i = 0; i < plane; ++i) {
        const double da = a[c * plane + i] - ma;
        const double db = b[c * plane + i] - mb;
        va += da * da;
        vb += db * db;
        cov += da * db;
      }
      const double n = static_cast<double>(plane);
      total += ssim_formula(ma, mb, va / n, vb / n, cov / n);
    }
    return {total / static_cast<double>(s.channels), true};
  }

  static const auto w = gaussian_window();
  const std::size_t out_h = s.height - kWindow + 1;
  const std::size_t out_w = s.width - kWindow + 1;
  double total = 0.0;
  for (std::size_t c = 0; c < s.channels; ++c) {
    for (std::size_t y = 0; y < out_h; ++y) {
      for (std::size_t x = 0; x < out_w; ++x) {
        double ma = 0.0, mb = 0.0, aa = 0.0, bb = 0.0, ab = 0.0;
        for (std::size_t i = 0; i < kWindow; ++i) {
          for (std::size_t j = 0; j < kWindow; ++j) {
            const double wt = w[i] * w[j];
            const double va = a.at(c, y + i, x + j);
            const double vb = b.at(c, y + i, x + j);
            ma += wt * va;
            mb += wt * vb;
            aa += wt * va * va;
            bb += wt * vb * vb;
            ab += wt * va * vb;
          }
        }
        total += ssim_formula(ma, mb, aa - ma * ma, bb - mb * mb, ab - ma * mb);
      }
    }
  }
  return {total / static_cast<double>(s.channels * out_h * out_w), false};
}

Tensor perturbation_grayscale(const Tensor& delta, double eps) {
  if (!(eps > 0.0)) throw ConfigError("perturbation_grayscale: eps must be > 0");
  const Shape s = delta.shape();
  if (s.channels != 1 && s.channels != 3) {
    throw ShapeError("perturbation_grayscale: expected 1 or 3 channels, got " + s.str());
  }
  const std::size_t plane = s.height * s.width;
  Tensor gray({1, s.height, s.width});
  // Same float radius the projections use, so +-radius land on 0 and 1 exactly.
  const double radius = static_cast<float>(eps);
  auto normalized = [&](std::size_t c, std::size_t i) {
    return (static_cast<double>(delta[c * plane + i]) + radius) / (2.0 * radius);
  };
  for (std::size_t i = 0; i < plane; ++i) {
    double value;
    if (s.channels == 1) {
      value = normalized(0, i);
    } else {
      const double r = normalized(0, i);
      const double g = normalized(1, i);
      const double b = normalized(2, i);
      // 0.299R + 0.587G + 0.114B written around B so equal channels map to
      // themselves without rounding.
      value = b + 0.299 * (r - b) + 0.587 * (g - b);
    }
    gray[i] = static_cast<float>(std::clamp(value, 0.0, 1.0));
  }
  return gray;
}

nlohmann::json EvalReport::to_json(bool include_timing) const {
  nlohmann::json j{{"samples", samples},
                   {"clean_original", clean_original},
                   {"clean_defended", clean_defended},
                   {"robust_original", robust_original},
                   {"robust_defended", robust_defended},
                   {"ssim_mean", ssim_mean},
                   {"ssim_min", ssim_min},
                   {"ssim_global_fallback", ssim_fallback},
                   {"mean_linf", mean_linf},
                   {"attack", attack.to_json()},
                   {"victim_fingerprint", victim_fingerprint},
                   {"backbone_fingerprint", backbone_fingerprint},
                   {"defense_fingerprint", defense_fingerprint}};
  if (include_timing) {
    j["timing"] = {{"defense_seconds_per_sample", defense_seconds_per_sample}, {"eval_seconds", eval_seconds}};
  }
  return j;
}

std::string EvalReport::to_table() const {
  std::ostringstream out;
  out << std::fixed << std::setprecision(1);
  out << "Clean/robust accuracy (" << samples << " samples, "
      << (attack.norm == Norm::linf ? "Linf" : "L2") << " eps=" << std::setprecision(5) << attack.eps
      << std::setprecision(1) << ", PGD " << attack.iterations << " steps x " << attack.restarts << " restarts)\n";
  out << std::left << std::setw(14) << "input" << std::right << std::setw(12) << "clean (%)" << std::setw(13)
      << "robust (%)" << "\n";
  out << std::left << std::setw(14) << "original" << std::right << std::setw(12) << 100.0 * clean_original
      << std::setw(13) << 100.0 * robust_original << "\n";
  out << std::left << std::setw(14) << "defended" << std::right << std::setw(12) << 100.0 * clean_defended
      << std::setw(13) << 100.0 * robust_defended << "\n";
  out << std::setprecision(4) << "SSIM mean " << ssim_mean << ", min " << ssim_min
      << (ssim_fallback ? " (global statistics: image smaller than the 11x11 window)" : "") << "\n";
  return out.str();
}

EvalReport clean_robust_eval(const Model& victim, std::span<const Tensor> originals,
                             std::span<const std::size_t> labels, std::span<const std::uint64_t> ids,
                             std::span<const Tensor> robust, const AttackBudget& attack, const EvalOptions& options) {
  if (originals.empty()) throw ConfigError("eval: empty set");
  if (originals.size() != robust.size() || originals.size() != labels.size() || originals.size() != ids.size()) {
    throw ShapeError("eval: originals, robust examples, labels and ids differ in length");
  }
  const auto started = std::chrono::steady_clock::now();
  EvalReport report;
  report.samples = originals.size();
  report.attack = attack;
  report.victim_fingerprint = weights_fingerprint(victim);
  report.backbone_fingerprint = options.backbone_fingerprint;
  report.defense_fingerprint = options.defense_fingerprint;
  if (options.transferable && !options.backbone_fingerprint.empty() &&
      options.backbone_fingerprint == report.victim_fingerprint) {
    throw ConfigError("eval: transferable evaluation requires a victim different from the defense backbone");
  }

  report.clean_original = accuracy(victim, originals, labels);
  report.clean_defended = accuracy(victim, robust, labels);
  const auto attacked_original = attack_batch(victim, originals, labels, ids, attack);
  const auto attacked_robust = attack_batch(victim, robust, labels, ids, attack);
  report.robust_original = accuracy(victim, attacked_original, labels);
  report.robust_defended = accuracy(victim, attacked_robust, labels);

  std::vector<SsimResult> scores(originals.size());
  parallel_for(originals.size(), [&](std::size_t i) { scores[i] = ssim(originals[i], robust[i]); });
  double sum = 0.0;
  double linf = 0.0;
  report.ssim_min = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < scores.size(); ++i) {
    sum += scores[i].value;
    report.ssim_min = std::min(report.ssim_min, scores[i].value);
    report.ssim_fallback = report.ssim_fallback || scores[i].fallback;
    linf += linf_distance(originals[i], robust[i]);
  }
  report.ssim_mean = sum / static_cast<double>(scores.size());
  report.mean_linf = linf / static_cast<double>(scores.size());
  report.eval_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return report;
}

}  // namespace pk
