#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "preemptkit/network.hpp"
#include "preemptkit/random.hpp"
#include "preemptkit/tensor.hpp"

namespace pk {

enum class InnerOptimizer { fgsm, pgd };
enum class Schedule { fore_then_back, alternate };

// Defense settings. Defaults are the three-step F1-B2 cascade with 20
// averaged FGSM samples per step.
struct DefenseConfig {
  double eps = 8.0 / 255.0;
  double eta = 0.7;
  int t_forward = 1;
  int t_backward = 2;
  int samples = 20;
  InnerOptimizer inner = InnerOptimizer::fgsm;
  int pgd_iterations = 10;  // inner PGD uses step eps/4
  Schedule schedule = Schedule::fore_then_back;
  bool random_init = true;
  std::uint64_t seed = 0;

  int total_steps() const { return t_forward + t_backward; }

  // Checks what a single step needs: eps > 0, eta > 0, samples >= 1,
  // pgd_iterations >= 1.
  void validate_step() const;
  // Full check, including the saturation constraint eta * (T_fwd + T_bwd) > 1.
  void validate() const;

  nlohmann::json to_json() const;
  static DefenseConfig from_json(const nlohmann::json& j);
  // SHA-256 of the canonical JSON form.
  std::string fingerprint() const;
};

struct RobustExample {
  Tensor robust;
  Tensor origin;
  std::size_t label_used = 0;
  std::string config_fingerprint;
  double seconds = 0.0;

  Tensor perturbation() const { return sub(robust, origin); }
};

// argmax of the classifier logits, lowest class on ties.
std::size_t label_input(const Model& classifier, const Tensor& x);

// Mean of (sample - base) over a non-empty list.
Tensor average_perturbations(std::span<const Tensor> samples, const Tensor& base);

// One forward-propagation step: N (randomly started) descent runs on
// CE(backbone(.), label), averaged, applied with weight eta and projected
// into the eps-ball of `origin`. Random starts are drawn from `rng` in order.
Tensor forward_step(const Model& backbone, std::size_t label, const Tensor& x_t, const Tensor& origin,
                    const DefenseConfig& cfg, Rng& rng);

// One backward-propagation step: N ascent runs (an attack), averaged, and the
// averaged perturbation subtracted with weight eta.
Tensor backward_step(const Model& backbone, std::size_t label, const Tensor& x_t, const Tensor& origin,
                     const DefenseConfig& cfg, Rng& rng);

// Full cascade with an explicit label and generator seed.
RobustExample fast_preemption_labeled(const Model& backbone, const Tensor& x, std::size_t label,
                                      const DefenseConfig& cfg, std::uint64_t seed);

// Labels x with the classifier, then runs the cascade seeded with cfg.seed.
RobustExample fast_preemption(const Model& classifier, const Model& backbone, const Tensor& x,
                              const DefenseConfig& cfg);

// Per-sample cascade with seed sample_seed(cfg.seed, ids[i]); results depend
// only on (image, id), not on position in the batch.
std::vector<RobustExample> batch_defend(const Model& classifier, const Model& backbone, std::span<const Tensor> xs,
                                        std::span<const std::uint64_t> ids, const DefenseConfig& cfg);

// As batch_defend, with caller-supplied labels instead of classifier labels.
std::vector<RobustExample> batch_defend_labeled(const Model& backbone, std::span<const Tensor> xs,
                                                std::span<const std::size_t> labels,
                                                std::span<const std::uint64_t> ids, const DefenseConfig& cfg);

}  // namespace pk
