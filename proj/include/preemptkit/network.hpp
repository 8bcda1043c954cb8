#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "preemptkit/dataset.hpp"
#include "preemptkit/tensor.hpp"

namespace pk {

enum class LayerKind : std::uint8_t { dense = 1, conv3x3 = 2, relu = 3, maxpool2x2 = 4, flatten = 5 };

std::string to_string(LayerKind kind);

// One layer of a feed-forward stack. `in`/`out` are features for dense and
// channels for conv3x3; conv3x3 uses zero padding of one pixel.
struct LayerSpec {
  LayerKind kind = LayerKind::relu;
  std::size_t in = 0;
  std::size_t out = 0;
  std::size_t stride = 1;

  static LayerSpec dense(std::size_t in, std::size_t out) { return {LayerKind::dense, in, out, 1}; }
  static LayerSpec conv3x3(std::size_t in_ch, std::size_t out_ch, std::size_t stride = 1) {
    return {LayerKind::conv3x3, in_ch, out_ch, stride};
  }
  static LayerSpec relu() { return {LayerKind::relu, 0, 0, 1}; }
  static LayerSpec maxpool2x2() { return {LayerKind::maxpool2x2, 0, 0, 1}; }
  static LayerSpec flatten() { return {LayerKind::flatten, 0, 0, 1}; }

  bool has_params() const { return kind == LayerKind::dense || kind == LayerKind::conv3x3; }
  bool operator==(const LayerSpec&) const = default;
};

struct NetworkDef {
  Shape input;
  std::vector<LayerSpec> layers;
  std::size_t classes = 0;

  // Activation shape before each layer plus the output shape (layers+1
  // entries). Throws ShapeError when adjacent layers do not compose or the
  // output length differs from `classes`.
  std::vector<Shape> activation_shapes() const;
  void validate() const { (void)activation_shapes(); }

  std::vector<std::uint32_t> weight_dims(std::size_t layer) const;
  std::vector<std::uint32_t> bias_dims(std::size_t layer) const;
  std::size_t parameter_count() const;

  // conv3x3(C,8)-relu-maxpool2x2-flatten-dense(K).
  static NetworkDef reference(Shape input, std::size_t classes, std::size_t filters = 8);
  // A single dense layer straight from pixels to logits.
  static NetworkDef linear(Shape input, std::size_t classes);

  nlohmann::json to_json() const;
  static NetworkDef from_json(const nlohmann::json& j);
  bool operator==(const NetworkDef&) const = default;
};

enum class TrainingMode { standard, adversarial };

std::string to_string(TrainingMode mode);

template <typename T>
struct LayerParams {
  std::vector<T> weight;
  std::vector<T> bias;
  bool operator==(const LayerParams&) const = default;
};

// Same layout as the parameters; used for parameter gradients.
template <typename T>
using ParamSet = std::vector<LayerParams<T>>;

template <typename T>
struct ModelParams {
  ParamSet<T> layers;  // one entry per layer of the definition; empty for parameter-free layers
  TrainingMode mode = TrainingMode::standard;
  std::uint64_t seed = 0;
  std::uint32_t epochs = 0;
  double train_accuracy = -1.0;  // negative until training records it

  template <typename U>
  ModelParams<U> cast() const;
};

template <typename T>
struct LossGradient {
  T loss;
  BasicTensor<T> grad;
};

template <typename T>
struct BatchGradient {
  T mean_loss{};
  ParamSet<T> grads;
};

// Network definition bound to its parameters. Read-only methods are safe to
// call concurrently.
template <typename T>
class Network {
 public:
  Network(NetworkDef def, ModelParams<T> params);

  // Kaiming-style uniform init: U(-sqrt(6/fan_in), +sqrt(6/fan_in)), zero bias.
  static Network initialized(NetworkDef def, std::uint64_t seed);

  const NetworkDef& def() const { return def_; }
  const ModelParams<T>& params() const { return params_; }
  ModelParams<T>& params() { return params_; }

  std::vector<T> forward(const BasicTensor<T>& x) const;
  std::size_t predict(const BasicTensor<T>& x) const;
  T loss(const BasicTensor<T>& x, std::size_t label) const;

  // Exact d CE(forward(x), label) / dx.
  LossGradient<T> input_gradient(const BasicTensor<T>& x, std::size_t label) const;

  // Mean CE gradient over the batch with respect to every weight and bias.
  BatchGradient<T> param_gradient(std::span<const BasicTensor<T>> xs, std::span<const std::size_t> labels) const;

  // Smallest |pre-activation| at any relu and smallest gap between the two
  // largest entries of any pooling window. Gradient checks use it to stay
  // away from points where the network is not differentiable.
  T kink_margin(const BasicTensor<T>& x) const;

  template <typename U>
  Network<U> cast() const {
    return Network<U>(def_, params_.template cast<U>());
  }

 private:
  struct Trace;
  Trace run_forward(const BasicTensor<T>& x) const;
  void run_backward(const Trace& trace, std::vector<T> grad_out, ParamSet<T>* param_grads,
                    std::vector<T>* input_grad) const;

  NetworkDef def_;
  ModelParams<T> params_;
};

using Model = Network<float>;

extern template class Network<float>;
extern template class Network<double>;

// Adversarial sub-config: inner L-inf PGD used to perturb each training sample.
struct InnerAttack {
  double eps = 8.0 / 255.0;
  double step = 2.0 / 255.0;
  int iterations = 7;
  // Epochs over which eps and step ramp linearly up to their full values;
  // 0 uses the full budget from the start.
  std::size_t warmup_epochs = 0;

  // Budget scale for a given epoch, in (0, 1].
  double ramp(std::size_t epoch) const;
};

struct TrainConfig {
  std::size_t epochs = 10;
  std::size_t batch_size = 32;
  double learning_rate = 0.05;
  std::uint64_t seed = 1;
  std::optional<InnerAttack> adversarial;

  TrainingMode mode() const { return adversarial ? TrainingMode::adversarial : TrainingMode::standard; }
  void validate() const;
  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);
};

// Plain minibatch SGD. Batch order comes from a generator seeded with
// cfg.seed; weights are initialised from derive_seed(cfg.seed, 0).
// Throws NumericError if the loss becomes non-finite.
Model train_standard(const NetworkDef& def, const Dataset& data, const TrainConfig& cfg);

// As train_standard, but every sample of every batch is first replaced by a
// PGD example against the current weights and its true label. An inner eps of
// zero reproduces the standard trajectory exactly.
Model train_adversarial(const NetworkDef& def, const Dataset& data, const TrainConfig& cfg);

// PKW1 weight file. Layout (little-endian): "PKW1", u32 record count, then per
// parameter tensor: u8 kind tag (layer kind, | 0x80 for a bias), u32 rank,
// rank x u32 dims, f32 payload; finally u32 CRC-32 over all payload bytes.
std::vector<std::uint8_t> encode_weights(const NetworkDef& def, const ModelParams<float>& params);
ModelParams<float> decode_weights(const NetworkDef& def, std::span<const std::uint8_t> bytes);
void save_weights(const Model& model, const std::filesystem::path& path);
Model load_weights(const NetworkDef& def, const std::filesystem::path& path);

// SHA-256 of the encoded weights.
std::string weights_fingerprint(const Model& model);

}  // namespace pk
