#pragma once

#include <cstddef>
#include <random>
#include <vector>

#include "preemptkit/network.hpp"
#include "preemptkit/tensor.hpp"

namespace support {

inline pk::Tensor flat(std::vector<float> values) {
  const std::size_t n = values.size();
  return pk::Tensor({1, 1, n}, std::move(values));
}

// Single dense layer with the given row-major (classes x inputs) weights.
inline pk::Model linear_model(pk::Shape input, std::size_t classes, std::vector<float> weights,
                              std::vector<float> bias = {}) {
  pk::NetworkDef def = pk::NetworkDef::linear(input, classes);
  pk::ModelParams<float> params;
  params.layers.resize(def.layers.size());
  params.layers[1].weight = std::move(weights);
  params.layers[1].bias = bias.empty() ? std::vector<float>(classes, 0.0f) : std::move(bias);
  return pk::Model(def, params);
}

// logits == x for a length-n input.
inline pk::Model identity_model(std::size_t n) {
  std::vector<float> w(n * n, 0.0f);
  for (std::size_t i = 0; i < n; ++i) w[i * n + i] = 1.0f;
  return linear_model({1, 1, n}, n, w);
}

// Binary linear model whose class-1 minus class-0 weight row is `diff`; the
// CE gradient for label 0 then has sign(diff) everywhere.
inline pk::Model binary_linear(const std::vector<float>& diff, pk::Shape shape) {
  std::vector<float> w(2 * diff.size(), 0.0f);
  for (std::size_t i = 0; i < diff.size(); ++i) w[diff.size() + i] = diff[i];
  return linear_model(shape, 2, w);
}

inline pk::Tensor uniform_image(pk::Shape shape, std::mt19937_64& rng, float lo = 0.0f, float hi = 1.0f) {
  std::uniform_real_distribution<float> dist(lo, hi);
  pk::Tensor t(shape);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = dist(rng);
  return t;
}

// Random diff vector with entries bounded away from zero.
inline std::vector<float> nonzero_signs(std::size_t n, std::mt19937_64& rng) {
  std::uniform_real_distribution<float> mag(0.2f, 1.0f);
  std::bernoulli_distribution coin(0.5);
  std::vector<float> out(n);
  for (auto& v : out) v = coin(rng) ? mag(rng) : -mag(rng);
  return out;
}

}  // namespace support
