#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "json.hpp"

#include "preemptkit/network.hpp"
#include "preemptkit/tensor.hpp"

namespace pk {

enum class Norm { linf, l2 };

// Threat-model budget. Evaluation defaults: step = eps/4, 20 iterations, 5 restarts.
struct AttackBudget {
  Norm norm = Norm::linf;
  double eps = 8.0 / 255.0;
  double step = 2.0 / 255.0;
  int iterations = 20;
  int restarts = 5;
  bool random_init = true;
  std::uint64_t seed = 0;

  void validate() const;
  static AttackBudget evaluation(double eps, Norm norm = Norm::linf);
  nlohmann::json to_json() const;
  static AttackBudget from_json(const nlohmann::json& j);
};

// Single signed-gradient ascent step of size eps on CE(model(x), label). With
// random_init the step starts from x + U(-eps, eps) projected back into the
// ball. Output lies in the eps-ball around x and in [0,1].
Tensor fgsm_attack(const Model& model, const Tensor& x, std::size_t label, double eps, bool random_init,
                   std::uint64_t seed);

// `iterations` projected steps of size `step`; sign direction for L-inf, the
// normalised gradient for L2 (a zero gradient skips the step).
Tensor pgd_attack(const Model& model, const Tensor& x, std::size_t label, const AttackBudget& budget);

struct RestartResult {
  Tensor example;
  double loss = 0.0;
  int restart = 0;
  std::vector<double> restart_losses;
};

// Restart 0 runs pgd_attack with budget.seed, restart r > 0 with
// derive_seed(budget.seed, r). The highest-loss
// candidate wins, earliest restart on ties.
RestartResult pgd_multi_restart_detailed(const Model& model, const Tensor& x, std::size_t label,
                                         const AttackBudget& budget);
Tensor pgd_multi_restart(const Model& model, const Tensor& x, std::size_t label, const AttackBudget& budget);

// Multi-restart PGD over a set; sample i uses seed sample_seed(budget.seed, ids[i]).
// An eps of 0 means "no attack" and returns the inputs unchanged.
std::vector<Tensor> attack_batch(const Model& model, std::span<const Tensor> xs, std::span<const std::size_t> labels,
                                 std::span<const std::uint64_t> ids, const AttackBudget& budget);

}  // namespace pk
