#pragma once

#include <cstddef>
#include <cstdint>
#include <string>

#include "json.hpp"

#include "preemptkit/network.hpp"

namespace pk {

struct GradcheckOptions {
  std::size_t nets = 100;
  double h = 1e-5;
  double tolerance = 1e-4;
  // Points whose kink margin is below this are redrawn: central differences
  // straddling a relu or pooling switch measure the wrong derivative.
  double min_kink_margin = 1e-3;
  // Denominator floor for the relative error, so coordinates that are zero
  // on both sides do not divide by zero.
  double floor = 1e-6;
  std::uint64_t seed = 0;
};

struct GradcheckReport {
  std::size_t nets = 0;
  std::size_t input_coordinates = 0;
  std::size_t param_coordinates = 0;
  std::size_t redrawn_points = 0;
  double max_input_rel_error = 0.0;
  double max_param_rel_error = 0.0;
  std::string worst_architecture;
  GradcheckOptions options;

  bool passed() const {
    return max_input_rel_error <= options.tolerance && max_param_rel_error <= options.tolerance;
  }
  nlohmann::json to_json() const;
};

// |a - b| / max(|a|, |b|, floor).
double relative_error(double analytic, double numeric, double floor);

// Draws `nets` random small networks (dense, conv/relu/pool and dense/relu
// stacks) in 64-bit, and compares input and parameter gradients with central
// differences.
GradcheckReport run_gradcheck(const GradcheckOptions& options);

}  // namespace pk
