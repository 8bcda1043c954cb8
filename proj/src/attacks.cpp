#include "preemptkit/attacks.hpp"

#include <cmath>

#include "preemptkit/parallel.hpp"
#include "preemptkit/random.hpp"

namespace pk {

void AttackBudget::validate() const {
  if (!(eps > 0.0)) throw ConfigError("attack: eps must be > 0");
  if (!(step > 0.0)) throw ConfigError("attack: step must be > 0");
  if (iterations < 1) throw ConfigError("attack: iterations must be >= 1");
  if (restarts < 1) throw ConfigError("attack: restarts must be >= 1");
}

AttackBudget AttackBudget::evaluation(double eps, Norm norm) {
  AttackBudget b;
  b.norm = norm;
  b.eps = eps;
  b.step = eps / 4.0;
  b.iterations = 20;
  b.restarts = 5;
  return b;
}

nlohmann::json AttackBudget::to_json() const {
  return {{"norm", norm == Norm::linf ? "linf" : "l2"},
          {"eps", eps},
          {"step", step},
          {"iterations", iterations},
          {"restarts", restarts},
          {"random_init", random_init},
          {"seed", seed}};
}

AttackBudget AttackBudget::from_json(const nlohmann::json& j) {
  const std::string norm = j.value("norm", std::string("linf"));
  if (norm != "linf" && norm != "l2") throw ConfigError("attack: unknown norm '" + norm + "'");
  AttackBudget b = evaluation(j.value("eps", 8.0 / 255.0), norm == "linf" ? Norm::linf : Norm::l2);
  b.step = j.value("step", b.step);
  b.iterations = j.value("iterations", b.iterations);
  b.restarts = j.value("restarts", b.restarts);
  b.random_init = j.value("random_init", b.random_init);
  b.seed = j.value("seed", b.seed);
  return b;
}

namespace {

Tensor project(Norm norm, const Tensor& x, const Tensor& cand, double eps) {
  return norm == Norm::linf ? project_linf(x, cand, eps) : project_l2(x, cand, eps);
}

Tensor random_start(Norm norm, const Tensor& x, double eps, std::uint64_t seed) {
  Rng rng(seed);
  std::uniform_real_distribution<float> dist(-static_cast<float>(eps), static_cast<float>(eps));
  Tensor start = x;
  for (std::size_t i = 0; i < start.size(); ++i) start[i] += dist(rng);
  return project(norm, x, start, eps);
}

// One ascent step from `current` along dir(grad), projected around `x`.
Tensor ascent_step(const Model& model, const Tensor& x, const Tensor& current, std::size_t label, Norm norm,
                   double step, double eps) {
  const auto lg = model.input_gradient(current, label);
  if (!std::isfinite(lg.loss)) throw NumericError("attack: non-finite loss");
  Tensor next = current;
  if (norm == Norm::linf) {
    const float a = static_cast<float>(step);
    for (std::size_t i = 0; i < next.size(); ++i) {
      const float g = lg.grad[i];
      next[i] += g > 0.0f ? a : (g < 0.0f ? -a : 0.0f);
    }
  } else {
    const double norm2 = l2_norm(lg.grad);
    if (norm2 == 0.0) return current;
    const double scale_by = step / norm2;
    for (std::size_t i = 0; i < next.size(); ++i) {
      next[i] = static_cast<float>(static_cast<double>(next[i]) + scale_by * static_cast<double>(lg.grad[i]));
    }
  }
  return project(norm, x, next, eps);
}

}  // namespace

Tensor fgsm_attack(const Model& model, const Tensor& x, std::size_t label, double eps, bool random_init,
                   std::uint64_t seed) {
  if (!(eps > 0.0)) throw ConfigError("fgsm: eps must be > 0");
  const Tensor start = random_init ? random_start(Norm::linf, x, eps, seed) : x;
  return ascent_step(model, x, start, label, Norm::linf, eps, eps);
}

Tensor pgd_attack(const Model& model, const Tensor& x, std::size_t label, const AttackBudget& budget) {
  budget.validate();
  Tensor current = budget.random_init ? random_start(budget.norm, x, budget.eps, budget.seed) : x;
  for (int i = 0; i < budget.iterations; ++i) {
    current = ascent_step(model, x, current, label, budget.norm, budget.step, budget.eps);
  }
  return current;
}

RestartResult pgd_multi_restart_detailed(const Model& model, const Tensor& x, std::size_t label,
                                         const AttackBudget& budget) {
  budget.validate();
  RestartResult best;
  best.restart = -1;
  for (int r = 0; r < budget.restarts; ++r) {
    AttackBudget local = budget;
    local.seed = r == 0 ? budget.seed : derive_seed(budget.seed, static_cast<std::uint64_t>(r));
    Tensor candidate = pgd_attack(model, x, label, local);
    const double loss = model.loss(candidate, label);
    best.restart_losses.push_back(loss);
    if (best.restart < 0 || loss > best.loss) {
      best.example = std::move(candidate);
      best.loss = loss;
      best.restart = r;
    }
  }
  return best;
}

Tensor pgd_multi_restart(const Model& model, const Tensor& x, std::size_t label, const AttackBudget& budget) {
  return pgd_multi_restart_detailed(model, x, label, budget).example;
}

std::vector<Tensor> attack_batch(const Model& model, std::span<const Tensor> xs, std::span<const std::size_t> labels,
                                 std::span<const std::uint64_t> ids, const AttackBudget& budget) {
  if (xs.size() != labels.size() || xs.size() != ids.size()) {
    throw ShapeError("attack_batch: images, labels and ids differ in length");
  }
  if (budget.eps == 0.0) return {xs.begin(), xs.end()};
  budget.validate();
  std::vector<Tensor> out(xs.size());
  parallel_for(xs.size(), [&](std::size_t i) {
    AttackBudget local = budget;
    local.seed = sample_seed(budget.seed, ids[i]);
    out[i] = pgd_multi_restart(model, xs[i], labels[i], local);
  });
  return out;
}

}  // namespace pk
