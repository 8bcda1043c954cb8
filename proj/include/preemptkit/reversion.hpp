#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "preemptkit/dataset.hpp"
#include "preemptkit/defense.hpp"
#include "preemptkit/network.hpp"

namespace pk {

using DefenseFn = std::function<Tensor(const Tensor&)>;

// x_r - (defense(x_r) - x_r) before any clamping, i.e. 2*x_r - defense(x_r).
Tensor reversion_unclamped(const Tensor& robust, const Tensor& second_round);

// Runs a second defense on the robust example and subtracts its perturbation;
// the estimate is clamped to [0,1].
Tensor preemptive_reversion(const DefenseFn& defense, const Tensor& robust);

// clamp01(x + N(0, sigma^2)) with a generator seeded by `seed`.
Tensor noise_distortion(const Tensor& x, double sigma, std::uint64_t seed);

// Reassigns exactly floor(fraction * n) seeded positions to a uniformly drawn
// wrong class.
std::vector<std::size_t> corrupt_labels(std::span<const std::size_t> labels, double fraction, std::uint64_t seed,
                                        std::size_t classes);

enum class ReversionMode { white_box, black_box };

// What the reverting attacker uses for its secondary defense. A white-box
// attacker holds the defender's classifier, backbone and config, so its
// secondary defense labels inputs exactly as the defender's (deliberately
// poor) labelling did, corrupted labels included. A black-box attacker labels
// with its own classifier.
struct ReversionScenario {
  std::string name;
  ReversionMode mode = ReversionMode::white_box;
  const Model* classifier = nullptr;
  const Model* backbone = nullptr;
  DefenseConfig config;
};

// The defender being probed: classifier labels, backbone gradients, config.
struct Defender {
  const Model* classifier = nullptr;
  const Model* backbone = nullptr;
  DefenseConfig config;
};

enum class Verdict { reversed, distorted };
std::string to_string(Verdict v);

struct ReversionOutcome {
  std::string name;
  double accuracy = 0.0;
  Verdict verdict = Verdict::distorted;
  double mean_linf_to_original = 0.0;
  // Mean cosine between the defender's perturbation and the attacker's
  // second-round perturbation (noise rows: the added noise).
  double perturbation_cosine = 0.0;
};

struct ProtocolReport {
  std::size_t samples = 0;
  std::size_t corrupted = 0;
  double fraction = 0.0;
  double noise_sigma = 0.0;
  double original_accuracy = 0.0;
  double defended_accuracy = 0.0;
  double mean_linf_defended = 0.0;
  std::string defense_fingerprint;
  std::vector<ReversionOutcome> outcomes;

  const ReversionOutcome& outcome(const std::string& name) const;
  nlohmann::json to_json() const;
  std::string to_table() const;
};

// "reversed" iff the accuracy rose above the defended accuracy and ended
// closer to the original accuracy than the defended accuracy was.
Verdict judge(double original, double defended, double after);

struct ProtocolOptions {
  double fraction = 0.1;
  double noise_sigma = 0.05;
  std::uint64_t seed = 0;  // label corruption and noise
};

// Labels inputs with the defender's classifier, corrupts `fraction` of them
// (standing in for a poor classifier), defends, and measures victim clean
// accuracy (against ground truth) on the originals, the defended set, every
// scenario's reversion, and a blind noise distortion. Throws ConfigError if the defended accuracy is not below the
// original accuracy (the corruption fraction is too small).
ProtocolReport run_reversion_protocol(const Model& victim, const Dataset& data, const Defender& defender,
                                      std::span<const ReversionScenario> scenarios, const ProtocolOptions& options);

}  // namespace pk
