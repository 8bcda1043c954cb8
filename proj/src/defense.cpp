#include "preemptkit/defense.hpp"

#include <chrono>
#include <cmath>
#include <sstream>

#include "preemptkit/fingerprint.hpp"
#include "preemptkit/parallel.hpp"

namespace pk {

void DefenseConfig::validate_step() const {
  if (!(eps > 0.0)) throw ConfigError("defense: eps must be > 0");
  if (!(eta > 0.0)) throw ConfigError("defense: eta must be > 0");
  if (samples < 1) throw ConfigError("defense: samples (N) must be >= 1");
  if (inner == InnerOptimizer::pgd && pgd_iterations < 1) throw ConfigError("defense: pgd_iterations must be >= 1");
}

void DefenseConfig::validate() const {
  validate_step();
  if (t_forward < 0 || t_backward < 0) throw ConfigError("defense: step counts must be non-negative");
  if (total_steps() < 1) throw ConfigError("defense: T_forward + T_backward must be >= 1");
  if (!(eta * total_steps() > 1.0)) {
    std::ostringstream msg;
    msg << "defense: eta must meet eta*(T_forward+T_backward)>1 (got eta=" << eta << ", T_forward=" << t_forward
        << ", T_backward=" << t_backward << ", product=" << eta * total_steps() << ")";
    throw ConfigError(msg.str());
  }
}

nlohmann::json DefenseConfig::to_json() const {
  return {{"eps", eps},
          {"eta", eta},
          {"t_forward", t_forward},
          {"t_backward", t_backward},
          {"samples", samples},
          {"inner", inner == InnerOptimizer::fgsm ? "fgsm" : "pgd"},
          {"pgd_iterations", pgd_iterations},
          {"schedule", schedule == Schedule::fore_then_back ? "fore_then_back" : "alternate"},
          {"random_init", random_init},
          {"seed", seed}};
}

DefenseConfig DefenseConfig::from_json(const nlohmann::json& j) {
  DefenseConfig cfg;
  cfg.eps = j.value("eps", cfg.eps);
  cfg.eta = j.value("eta", cfg.eta);
  cfg.t_forward = j.value("t_forward", cfg.t_forward);
  cfg.t_backward = j.value("t_backward", cfg.t_backward);
  cfg.samples = j.value("samples", cfg.samples);
  const std::string inner = j.value("inner", std::string("fgsm"));
  if (inner == "fgsm") {
    cfg.inner = InnerOptimizer::fgsm;
  } else if (inner == "pgd") {
    cfg.inner = InnerOptimizer::pgd;
  } else {
    throw ConfigError("defense: unknown inner optimizer '" + inner + "'");
  }
  cfg.pgd_iterations = j.value("pgd_iterations", cfg.pgd_iterations);
  const std::string schedule = j.value("schedule", std::string("fore_then_back"));
  if (schedule == "fore_then_back") {
    cfg.schedule = Schedule::fore_then_back;
  } else if (schedule == "alternate") {
    cfg.schedule = Schedule::alternate;
  } else {
    throw ConfigError("defense: unknown schedule '" + schedule + "'");
  }
  cfg.random_init = j.value("random_init", cfg.random_init);
  cfg.seed = j.value("seed", cfg.seed);
  return cfg;
}

std::string DefenseConfig::fingerprint() const { return json_fingerprint(to_json()); }

std::size_t label_input(const Model& classifier, const Tensor& x) { return classifier.predict(x); }

Tensor average_perturbations(std::span<const Tensor> samples, const Tensor& base) {
  if (samples.empty()) throw ConfigError("average_perturbations: empty sample list");
  std::vector<double> sum(base.size(), 0.0);
  for (const Tensor& s : samples) {
    if (s.shape() != base.shape()) throw ShapeError("average_perturbations: shape mismatch");
    for (std::size_t i = 0; i < sum.size(); ++i) sum[i] += static_cast<double>(s[i]) - static_cast<double>(base[i]);
  }
  Tensor mean(base.shape());
  const double n = static_cast<double>(samples.size());
  for (std::size_t i = 0; i < sum.size(); ++i) mean[i] = static_cast<float>(sum[i] / n);
  return mean;
}

namespace {

// direction = -1 descends the loss (forward), +1 ascends it (backward).
Tensor inner_run(const Model& backbone, std::size_t label, Tensor start, const Tensor& origin,
                 const DefenseConfig& cfg, float direction) {
  const bool fgsm = cfg.inner == InnerOptimizer::fgsm;
  const int iterations = fgsm ? 1 : cfg.pgd_iterations;
  const float step = static_cast<float>(fgsm ? cfg.eps : cfg.eps / 4.0);
  Tensor current = std::move(start);
  for (int i = 0; i < iterations; ++i) {
    const auto lg = backbone.input_gradient(current, label);
    for (std::size_t p = 0; p < current.size(); ++p) {
      const float g = lg.grad[p];
      current[p] += direction * (g > 0.0f ? step : (g < 0.0f ? -step : 0.0f));
    }
    current = project_linf(origin, current, cfg.eps);
  }
  return current;
}

Tensor averaged_step(const Model& backbone, std::size_t label, const Tensor& x_t, const Tensor& origin,
                     const DefenseConfig& cfg, Rng& rng, float direction) {
  cfg.validate_step();
  if (x_t.shape() != origin.shape()) throw ShapeError("defense step: x_t and origin differ in shape");
  std::uniform_real_distribution<float> init(-static_cast<float>(cfg.eps), static_cast<float>(cfg.eps));
  std::vector<Tensor> samples;
  samples.reserve(static_cast<std::size_t>(cfg.samples));
  for (int n = 0; n < cfg.samples; ++n) {
    Tensor start = x_t;
    if (cfg.random_init) {
      for (std::size_t p = 0; p < start.size(); ++p) start[p] += init(rng);
    }
    samples.push_back(inner_run(backbone, label, std::move(start), origin, cfg, direction));
  }
  const Tensor mean = average_perturbations(samples, x_t);
  // Forward adds the averaged descent offset, backward subtracts the averaged attack offset.
  Tensor next = x_t;
  const float weight = static_cast<float>(cfg.eta) * -direction;
  for (std::size_t p = 0; p < next.size(); ++p) next[p] += weight * mean[p];
  return project_linf(origin, next, cfg.eps);
}

}  // namespace

Tensor forward_step(const Model& backbone, std::size_t label, const Tensor& x_t, const Tensor& origin,
                    const DefenseConfig& cfg, Rng& rng) {
  return averaged_step(backbone, label, x_t, origin, cfg, rng, -1.0f);
}

Tensor backward_step(const Model& backbone, std::size_t label, const Tensor& x_t, const Tensor& origin,
                     const DefenseConfig& cfg, Rng& rng) {
  return averaged_step(backbone, label, x_t, origin, cfg, rng, +1.0f);
}

RobustExample fast_preemption_labeled(const Model& backbone, const Tensor& x, std::size_t label,
                                      const DefenseConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  const auto started = std::chrono::steady_clock::now();
  Rng rng(seed);
  Tensor current = x;
  if (cfg.schedule == Schedule::fore_then_back) {
    for (int t = 0; t < cfg.t_forward; ++t) current = forward_step(backbone, label, current, x, cfg, rng);
    for (int t = 0; t < cfg.t_backward; ++t) current = backward_step(backbone, label, current, x, cfg, rng);
  } else {
    for (int t = 0; t < cfg.total_steps(); ++t) {
      current = t % 2 == 0 ? forward_step(backbone, label, current, x, cfg, rng)
                           : backward_step(backbone, label, current, x, cfg, rng);
    }
  }
  RobustExample out;
  out.robust = std::move(current);
  out.origin = x;
  out.label_used = label;
  out.config_fingerprint = cfg.fingerprint();
  out.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return out;
}

RobustExample fast_preemption(const Model& classifier, const Model& backbone, const Tensor& x,
                              const DefenseConfig& cfg) {
  return fast_preemption_labeled(backbone, x, label_input(classifier, x), cfg, cfg.seed);
}

std::vector<RobustExample> batch_defend_labeled(const Model& backbone, std::span<const Tensor> xs,
                                                std::span<const std::size_t> labels,
                                                std::span<const std::uint64_t> ids, const DefenseConfig& cfg) {
  if (xs.empty()) throw ConfigError("batch_defend: empty dataset");
  if (xs.size() != labels.size() || xs.size() != ids.size()) {
    throw ShapeError("batch_defend: images, labels and ids differ in length");
  }
  cfg.validate();
  std::vector<RobustExample> out(xs.size());
  parallel_for(xs.size(), [&](std::size_t i) {
    out[i] = fast_preemption_labeled(backbone, xs[i], labels[i], cfg, sample_seed(cfg.seed, ids[i]));
  });
  return out;
}

std::vector<RobustExample> batch_defend(const Model& classifier, const Model& backbone, std::span<const Tensor> xs,
                                        std::span<const std::uint64_t> ids, const DefenseConfig& cfg) {
  std::vector<std::size_t> labels(xs.size());
  parallel_for(xs.size(), [&](std::size_t i) { labels[i] = label_input(classifier, xs[i]); });
  return batch_defend_labeled(backbone, xs, labels, ids, cfg);
}

}  // namespace pk
