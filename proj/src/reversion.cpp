#include "preemptkit/reversion.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <numeric>
#include <sstream>

#include "preemptkit/metrics.hpp"
#include "preemptkit/parallel.hpp"
#include "preemptkit/random.hpp"

namespace pk {

Tensor reversion_unclamped(const Tensor& robust, const Tensor& second_round) {
  return sub(robust, sub(second_round, robust));
}

Tensor preemptive_reversion(const DefenseFn& defense, const Tensor& robust) {
  const Tensor second = defense(robust);
  return clamp01(reversion_unclamped(robust, second));
}

Tensor noise_distortion(const Tensor& x, double sigma, std::uint64_t seed) {
  if (sigma < 0.0) throw ConfigError("noise_distortion: sigma must be >= 0");
  if (sigma == 0.0) return x;
  Rng rng(seed);
  std::normal_distribution<float> noise(0.0f, static_cast<float>(sigma));
  Tensor out = x;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += noise(rng);
  return clamp01(out);
}

std::vector<std::size_t> corrupt_labels(std::span<const std::size_t> labels, double fraction, std::uint64_t seed,
                                        std::size_t classes) {
  if (classes < 2) throw ConfigError("corrupt_labels: need at least 2 classes");
  if (!(fraction >= 0.0 && fraction <= 1.0)) throw ConfigError("corrupt_labels: fraction must lie in [0,1]");
  std::vector<std::size_t> out(labels.begin(), labels.end());
  const auto count = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(labels.size())));
  std::vector<std::size_t> order(labels.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  std::uniform_int_distribution<std::size_t> offset(1, classes - 1);
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t at = order[i];
    if (labels[at] >= classes) throw ConfigError("corrupt_labels: label out of range");
    out[at] = (labels[at] + offset(rng)) % classes;
  }
  return out;
}

std::string to_string(Verdict v) { return v == Verdict::reversed ? "reversed" : "distorted"; }

Verdict judge(double original, double defended, double after) {
  const bool rose = after > defended;
  const bool closer = std::abs(after - original) < std::abs(defended - original);
  return rose && closer ? Verdict::reversed : Verdict::distorted;
}

const ReversionOutcome& ProtocolReport::outcome(const std::string& name) const {
  for (const auto& o : outcomes) {
    if (o.name == name) return o;
  }
  throw ConfigError("protocol report has no outcome named '" + name + "'");
}

nlohmann::json ProtocolReport::to_json() const {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& o : outcomes) {
    rows.push_back({{"name", o.name},
                    {"accuracy", o.accuracy},
                    {"verdict", to_string(o.verdict)},
                    {"mean_linf_to_original", o.mean_linf_to_original},
                    {"perturbation_cosine", o.perturbation_cosine}});
  }
  return {{"samples", samples},
          {"corrupted", corrupted},
          {"fraction", fraction},
          {"noise_sigma", noise_sigma},
          {"original_accuracy", original_accuracy},
          {"defended_accuracy", defended_accuracy},
          {"mean_linf_defended", mean_linf_defended},
          {"defense_fingerprint", defense_fingerprint},
          {"reversions", rows}};
}

std::string ProtocolReport::to_table() const {
  std::ostringstream out;
  out << std::fixed << std::setprecision(1);
  out << "Reversion protocol (" << samples << " samples, " << corrupted << " corrupted labels)\n";
  out << std::left << std::setw(22) << "condition" << std::right << std::setw(12) << "clean (%)" << "  verdict\n";
  out << std::left << std::setw(22) << "original" << std::right << std::setw(12) << 100.0 * original_accuracy << "\n";
  out << std::left << std::setw(22) << "defended" << std::right << std::setw(12) << 100.0 * defended_accuracy << "\n";
  for (const auto& o : outcomes) {
    out << std::left << std::setw(22) << o.name << std::right << std::setw(12) << 100.0 * o.accuracy << "  "
        << to_string(o.verdict) << "\n";
  }
  return out.str();
}

ProtocolReport run_reversion_protocol(const Model& victim, const Dataset& data, const Defender& defender,
                                      std::span<const ReversionScenario> scenarios, const ProtocolOptions& options) {
  if (!defender.classifier || !defender.backbone) throw ConfigError("protocol: defender models are missing");
  data.validate();
  if (data.size() == 0) throw ConfigError("protocol: empty dataset");
  defender.config.validate();
  const std::string defense_fp = defender.config.fingerprint();
  for (const auto& s : scenarios) {
    if (!s.classifier || !s.backbone) throw ConfigError("protocol: scenario '" + s.name + "' lacks models");
    if (s.mode == ReversionMode::white_box &&
        (s.config.fingerprint() != defense_fp || weights_fingerprint(*s.backbone) != weights_fingerprint(*defender.backbone) ||
         weights_fingerprint(*s.classifier) != weights_fingerprint(*defender.classifier))) {
      throw ConfigError("protocol: white-box scenario '" + s.name +
                        "' must use the defender's classifier, backbone and config");
    }
  }

  const std::size_t n = data.size();
  std::vector<std::size_t> assigned(n);
  parallel_for(n, [&](std::size_t i) { assigned[i] = label_input(*defender.classifier, data.images[i]); });
  const auto corrupted = corrupt_labels(assigned, options.fraction, options.seed, data.classes);

  const auto defended = batch_defend_labeled(*defender.backbone, data.images, corrupted, data.ids, defender.config);
  std::vector<Tensor> robust(n);
  for (std::size_t i = 0; i < n; ++i) robust[i] = defended[i].robust;

  ProtocolReport report;
  report.samples = n;
  report.fraction = options.fraction;
  report.noise_sigma = options.noise_sigma;
  report.defense_fingerprint = defense_fp;
  for (std::size_t i = 0; i < n; ++i) report.corrupted += corrupted[i] != assigned[i] ? 1 : 0;
  report.original_accuracy = accuracy(victim, data.images, data.labels);
  report.defended_accuracy = accuracy(victim, robust, data.labels);
  double linf = 0.0;
  for (std::size_t i = 0; i < n; ++i) linf += linf_distance(robust[i], data.images[i]);
  report.mean_linf_defended = linf / static_cast<double>(n);

  if (!(report.defended_accuracy < report.original_accuracy)) {
    std::ostringstream msg;
    msg << "protocol pre-flight failed: defended clean accuracy " << report.defended_accuracy
        << " is not below the original " << report.original_accuracy << "; increase the corruption fraction (now "
        << options.fraction << ")";
    throw ConfigError(msg.str());
  }

  auto finish = [&](const std::string& name, const std::vector<Tensor>& estimates, const std::vector<double>& cosines) {
    ReversionOutcome o;
    o.name = name;
    o.accuracy = accuracy(victim, estimates, data.labels);
    o.verdict = judge(report.original_accuracy, report.defended_accuracy, o.accuracy);
    double dist = 0.0;
    double cos = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      dist += linf_distance(estimates[i], data.images[i]);
      cos += cosines[i];
    }
    o.mean_linf_to_original = dist / static_cast<double>(n);
    o.perturbation_cosine = cos / static_cast<double>(n);
    report.outcomes.push_back(o);
  };

  for (const auto& s : scenarios) {
    std::vector<Tensor> estimates(n);
    std::vector<double> cosines(n);
    parallel_for(n, [&](std::size_t i) {
      const std::uint64_t seed = sample_seed(s.config.seed, data.ids[i]);
      Tensor second;
      const bool overridden = s.mode == ReversionMode::white_box && corrupted[i] != assigned[i];
      const DefenseFn defense = [&](const Tensor& input) {
        const std::size_t label = overridden ? corrupted[i] : label_input(*s.classifier, input);
        second = fast_preemption_labeled(*s.backbone, input, label, s.config, seed).robust;
        return second;
      };
      estimates[i] = preemptive_reversion(defense, robust[i]);
      cosines[i] = cosine_similarity(sub(robust[i], data.images[i]), sub(second, robust[i]));
    });
    finish(s.name, estimates, cosines);
  }

  std::vector<Tensor> noisy(n);
  std::vector<double> noise_cos(n);
  parallel_for(n, [&](std::size_t i) {
    noisy[i] = noise_distortion(robust[i], options.noise_sigma, sample_seed(derive_seed(options.seed, 1), data.ids[i]));
    noise_cos[i] = cosine_similarity(sub(robust[i], data.images[i]), sub(noisy[i], robust[i]));
  });
  finish("noise_distortion", noisy, noise_cos);
  return report;
}

}  // namespace pk
