#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "preemptkit/attacks.hpp"
#include "preemptkit/network.hpp"
#include "preemptkit/tensor.hpp"

namespace pk {

// Fraction of images whose predicted class equals the label.
double accuracy(const Model& model, std::span<const Tensor> images, std::span<const std::size_t> labels);

struct SsimResult {
  double value = 0.0;
  // Set when an image side is below the 11-pixel window and global
  // statistics were used instead of sliding windows.
  bool fallback = false;
};

// Gaussian-windowed SSIM (11x11, sigma 1.5, K1 0.01, K2 0.03, dynamic range 1)
// averaged over all valid window positions and channels.
SsimResult ssim(const Tensor& a, const Tensor& b);

// Maps a perturbation in [-eps, eps] to [0,1] and collapses colour channels
// with the NTSC luma weights 0.299/0.587/0.114. Single-channel input is taken
// as grey already. Returns a (1,H,W) tensor.
Tensor perturbation_grayscale(const Tensor& delta, double eps);

struct EvalOptions {
  // A transferable evaluation must not attack the defense backbone itself.
  bool transferable = true;
  std::string backbone_fingerprint;
  std::string defense_fingerprint;
};

struct EvalReport {
  std::size_t samples = 0;
  double clean_original = 0.0;
  double clean_defended = 0.0;
  double robust_original = 0.0;
  double robust_defended = 0.0;
  double ssim_mean = 0.0;
  double ssim_min = 0.0;
  bool ssim_fallback = false;
  double mean_linf = 0.0;
  AttackBudget attack;
  std::string victim_fingerprint;
  std::string backbone_fingerprint;
  std::string defense_fingerprint;
  // Wall-clock; excluded from to_json() unless asked for, since it is not reproducible.
  double defense_seconds_per_sample = 0.0;
  double eval_seconds = 0.0;

  nlohmann::json to_json(bool include_timing = false) const;
  std::string to_table() const;
};

// Clean accuracy on originals and robust examples, and robust accuracy after
// attacking each with ground-truth labels on the victim. An attack eps of 0
// leaves the inputs untouched.
EvalReport clean_robust_eval(const Model& victim, std::span<const Tensor> originals,
                             std::span<const std::size_t> labels, std::span<const std::uint64_t> ids,
                             std::span<const Tensor> robust, const AttackBudget& attack, const EvalOptions& options);

}  // namespace pk
