#include "preemptkit/network.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <limits>
#include <numeric>

#include "preemptkit/attacks.hpp"
#include "preemptkit/fingerprint.hpp"
#include "preemptkit/parallel.hpp"
#include "preemptkit/random.hpp"

namespace pk {

std::string to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::dense: return "dense";
    case LayerKind::conv3x3: return "conv3x3";
    case LayerKind::relu: return "relu";
    case LayerKind::maxpool2x2: return "maxpool2x2";
    case LayerKind::flatten: return "flatten";
  }
  return "unknown";
}

std::string to_string(TrainingMode mode) {
  return mode == TrainingMode::adversarial ? "adversarial" : "standard";
}

// ---------------------------------------------------------------------------
// NetworkDef

std::vector<Shape> NetworkDef::activation_shapes() const {
  if (input.size() == 0) throw ShapeError("network input shape is empty");
  if (classes < 2) throw ShapeError("network needs at least 2 classes");
  std::vector<Shape> shapes{input};
  shapes.reserve(layers.size() + 1);
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const LayerSpec& layer = layers[i];
    const Shape in = shapes.back();
    const std::string where = "layer " + std::to_string(i) + " (" + to_string(layer.kind) + "): ";
    switch (layer.kind) {
      case LayerKind::dense:
        if (layer.in != in.size() || layer.out == 0) {
          throw ShapeError(where + "expects " + std::to_string(layer.in) + " inputs, got " + in.str());
        }
        shapes.push_back({layer.out, 1, 1});
        break;
      case LayerKind::conv3x3:
        if (layer.in != in.channels || layer.out == 0 || layer.stride == 0) {
          throw ShapeError(where + "expects " + std::to_string(layer.in) + " channels, got " + in.str());
        }
        shapes.push_back({layer.out, (in.height - 1) / layer.stride + 1, (in.width - 1) / layer.stride + 1});
        break;
      case LayerKind::relu:
        shapes.push_back(in);
        break;
      case LayerKind::maxpool2x2:
        if (in.height < 2 || in.width < 2) throw ShapeError(where + "input too small " + in.str());
        shapes.push_back({in.channels, in.height / 2, in.width / 2});
        break;
      case LayerKind::flatten:
        shapes.push_back({in.size(), 1, 1});
        break;
      default:
        throw ShapeError(where + "unknown layer kind");
    }
  }
  if (shapes.back().size() != classes) {
    throw ShapeError("network output " + shapes.back().str() + " does not match " + std::to_string(classes) +
                     " classes");
  }
  return shapes;
}

std::vector<std::uint32_t> NetworkDef::weight_dims(std::size_t layer) const {
  const LayerSpec& l = layers.at(layer);
  const auto in = static_cast<std::uint32_t>(l.in);
  const auto out = static_cast<std::uint32_t>(l.out);
  if (l.kind == LayerKind::dense) return {out, in};
  if (l.kind == LayerKind::conv3x3) return {out, in, 3, 3};
  return {};
}

std::vector<std::uint32_t> NetworkDef::bias_dims(std::size_t layer) const {
  const LayerSpec& l = layers.at(layer);
  if (l.has_params()) return {static_cast<std::uint32_t>(l.out)};
  return {};
}

namespace {

std::size_t product(const std::vector<std::uint32_t>& dims) {
  return std::accumulate(dims.begin(), dims.end(), std::size_t{1},
                         [](std::size_t a, std::uint32_t b) { return a * b; });
}

}  // namespace

std::size_t NetworkDef::parameter_count() const {
  std::size_t total = 0;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    if (layers[i].has_params()) total += product(weight_dims(i)) + product(bias_dims(i));
  }
  return total;
}

NetworkDef NetworkDef::reference(Shape input, std::size_t classes, std::size_t filters) {
  NetworkDef def{input, {}, classes};
  def.layers.push_back(LayerSpec::conv3x3(input.channels, filters));
  def.layers.push_back(LayerSpec::relu());
  def.layers.push_back(LayerSpec::maxpool2x2());
  def.layers.push_back(LayerSpec::flatten());
  def.layers.push_back(LayerSpec::dense(filters * (input.height / 2) * (input.width / 2), classes));
  def.validate();
  return def;
}

NetworkDef NetworkDef::linear(Shape input, std::size_t classes) {
  NetworkDef def{input, {LayerSpec::flatten(), LayerSpec::dense(input.size(), classes)}, classes};
  def.validate();
  return def;
}

nlohmann::json NetworkDef::to_json() const {
  nlohmann::json layer_list = nlohmann::json::array();
  for (const LayerSpec& l : layers) {
    nlohmann::json entry{{"kind", to_string(l.kind)}};
    if (l.has_params()) {
      entry["in"] = l.in;
      entry["out"] = l.out;
    }
    if (l.kind == LayerKind::conv3x3) entry["stride"] = l.stride;
    layer_list.push_back(entry);
  }
  return {{"input", {input.channels, input.height, input.width}}, {"classes", classes}, {"layers", layer_list}};
}

NetworkDef NetworkDef::from_json(const nlohmann::json& j) {
  NetworkDef def;
  const auto& in = j.at("input");
  def.input = {in.at(0).get<std::size_t>(), in.at(1).get<std::size_t>(), in.at(2).get<std::size_t>()};
  def.classes = j.at("classes").get<std::size_t>();
  for (const auto& entry : j.at("layers")) {
    const auto kind = entry.at("kind").get<std::string>();
    if (kind == "dense") {
      def.layers.push_back(LayerSpec::dense(entry.at("in"), entry.at("out")));
    } else if (kind == "conv3x3") {
      def.layers.push_back(LayerSpec::conv3x3(entry.at("in"), entry.at("out"), entry.value("stride", 1)));
    } else if (kind == "relu") {
      def.layers.push_back(LayerSpec::relu());
    } else if (kind == "maxpool2x2") {
      def.layers.push_back(LayerSpec::maxpool2x2());
    } else if (kind == "flatten") {
      def.layers.push_back(LayerSpec::flatten());
    } else {
      throw ConfigError("unknown layer kind '" + kind + "'");
    }
  }
  def.validate();
  return def;
}

template <typename T>
template <typename U>
ModelParams<U> ModelParams<T>::cast() const {
  ModelParams<U> out;
  out.mode = mode;
  out.seed = seed;
  out.epochs = epochs;
  out.train_accuracy = train_accuracy;
  out.layers.reserve(layers.size());
  for (const auto& l : layers) {
    out.layers.push_back({std::vector<U>(l.weight.begin(), l.weight.end()), std::vector<U>(l.bias.begin(), l.bias.end())});
  }
  return out;
}

template ModelParams<double> ModelParams<float>::cast<double>() const;
template ModelParams<float> ModelParams<double>::cast<float>() const;
template ModelParams<float> ModelParams<float>::cast<float>() const;
template ModelParams<double> ModelParams<double>::cast<double>() const;

// ---------------------------------------------------------------------------
// Network

template <typename T>
struct Network<T>::Trace {
  std::vector<Shape> shapes;
  std::vector<std::vector<T>> acts;  // acts[i] is the input of layer i; acts.back() the logits
  std::vector<std::vector<std::uint32_t>> pool_index;
};

template <typename T>
Network<T>::Network(NetworkDef def, ModelParams<T> params) : def_(std::move(def)), params_(std::move(params)) {
  def_.validate();
  if (params_.layers.size() != def_.layers.size()) {
    throw ShapeError("parameter set has " + std::to_string(params_.layers.size()) + " layers, definition has " +
                     std::to_string(def_.layers.size()));
  }
  for (std::size_t i = 0; i < def_.layers.size(); ++i) {
    const auto& p = params_.layers[i];
    const std::size_t w = def_.layers[i].has_params() ? product(def_.weight_dims(i)) : 0;
    const std::size_t b = def_.layers[i].has_params() ? product(def_.bias_dims(i)) : 0;
    if (p.weight.size() != w || p.bias.size() != b) {
      throw ShapeError("layer " + std::to_string(i) + " parameters do not match the definition");
    }
    auto finite = [](T v) { return std::isfinite(v); };
    if (!std::all_of(p.weight.begin(), p.weight.end(), finite) || !std::all_of(p.bias.begin(), p.bias.end(), finite)) {
      throw NumericError("layer " + std::to_string(i) + " has non-finite parameters");
    }
  }
}

template <typename T>
Network<T> Network<T>::initialized(NetworkDef def, std::uint64_t seed) {
  def.validate();
  Rng rng(seed);
  ModelParams<T> params;
  params.seed = seed;
  params.layers.resize(def.layers.size());
  for (std::size_t i = 0; i < def.layers.size(); ++i) {
    const LayerSpec& l = def.layers[i];
    if (!l.has_params()) continue;
    const double fan_in = l.kind == LayerKind::dense ? static_cast<double>(l.in) : static_cast<double>(l.in * 9);
    const double bound = std::sqrt(6.0 / fan_in);
    std::uniform_real_distribution<double> dist(-bound, bound);
    auto& p = params.layers[i];
    p.weight.resize(product(def.weight_dims(i)));
    for (T& w : p.weight) w = static_cast<T>(dist(rng));
    p.bias.assign(product(def.bias_dims(i)), T{0});
  }
  return Network(std::move(def), std::move(params));
}

template <typename T>
typename Network<T>::Trace Network<T>::run_forward(const BasicTensor<T>& x) const {
  Trace trace;
  trace.shapes = def_.activation_shapes();
  if (x.shape() != def_.input) {
    throw ShapeError("input shape " + x.shape().str() + " does not match network input " + def_.input.str());
  }
  trace.acts.reserve(def_.layers.size() + 1);
  trace.acts.emplace_back(x.values());
  trace.pool_index.resize(def_.layers.size());

  for (std::size_t li = 0; li < def_.layers.size(); ++li) {
    const LayerSpec& layer = def_.layers[li];
    const Shape& is = trace.shapes[li];
    const Shape& os = trace.shapes[li + 1];
    const std::vector<T>& in = trace.acts[li];
    std::vector<T> out(os.size(), T{0});
    const auto& p = params_.layers[li];

    switch (layer.kind) {
      case LayerKind::dense: {
        for (std::size_t o = 0; o < layer.out; ++o) {
          const T* row = p.weight.data() + o * layer.in;
          T acc = p.bias[o];
          for (std::size_t i = 0; i < layer.in; ++i) acc += row[i] * in[i];
          out[o] = acc;
        }
        break;
      }
      case LayerKind::conv3x3: {
        const std::size_t s = layer.stride;
        for (std::size_t oc = 0; oc < os.channels; ++oc) {
          T* plane = out.data() + oc * os.height * os.width;
          std::fill(plane, plane + os.height * os.width, p.bias[oc]);
          for (std::size_t ic = 0; ic < is.channels; ++ic) {
            const T* src = in.data() + ic * is.height * is.width;
            const T* k = p.weight.data() + (oc * is.channels + ic) * 9;
            for (std::size_t oh = 0; oh < os.height; ++oh) {
              for (std::size_t kh = 0; kh < 3; ++kh) {
                const std::ptrdiff_t ih = static_cast<std::ptrdiff_t>(oh * s + kh) - 1;
                if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(is.height)) continue;
                const T* src_row = src + ih * is.width;
                T* dst_row = plane + oh * os.width;
                for (std::size_t kw = 0; kw < 3; ++kw) {
                  const T wv = k[kh * 3 + kw];
                  for (std::size_t ow = 0; ow < os.width; ++ow) {
                    const std::ptrdiff_t iw = static_cast<std::ptrdiff_t>(ow * s + kw) - 1;
                    if (iw < 0 || iw >= static_cast<std::ptrdiff_t>(is.width)) continue;
                    dst_row[ow] += wv * src_row[iw];
                  }
                }
              }
            }
          }
        }
        break;
      }
      case LayerKind::relu:
        for (std::size_t i = 0; i < in.size(); ++i) out[i] = in[i] > T{0} ? in[i] : T{0};
        break;
      case LayerKind::maxpool2x2: {
        auto& index = trace.pool_index[li];
        index.resize(os.size());
        for (std::size_t c = 0; c < os.channels; ++c) {
          for (std::size_t oh = 0; oh < os.height; ++oh) {
            for (std::size_t ow = 0; ow < os.width; ++ow) {
              std::size_t best = (c * is.height + 2 * oh) * is.width + 2 * ow;
              for (std::size_t dh = 0; dh < 2; ++dh) {
                for (std::size_t dw = 0; dw < 2; ++dw) {
                  const std::size_t idx = (c * is.height + 2 * oh + dh) * is.width + 2 * ow + dw;
                  if (in[idx] > in[best]) best = idx;
                }
              }
              const std::size_t o = (c * os.height + oh) * os.width + ow;
              out[o] = in[best];
              index[o] = static_cast<std::uint32_t>(best);
            }
          }
        }
        break;
      }
      case LayerKind::flatten:
        out = in;
        break;
    }
    trace.acts.push_back(std::move(out));
  }
  for (T v : trace.acts.back()) {
    if (!std::isfinite(v)) throw NumericError("forward produced non-finite logits");
  }
  return trace;
}

template <typename T>
void Network<T>::run_backward(const Trace& trace, std::vector<T> grad, ParamSet<T>* param_grads,
                              std::vector<T>* input_grad) const {
  for (std::size_t li = def_.layers.size(); li-- > 0;) {
    const LayerSpec& layer = def_.layers[li];
    const Shape& is = trace.shapes[li];
    const Shape& os = trace.shapes[li + 1];
    const std::vector<T>& in = trace.acts[li];
    const auto& p = params_.layers[li];
    // The input gradient of the first layer is only needed for input_gradient.
    const bool need_dx = li > 0 || input_grad != nullptr;
    std::vector<T> dx(need_dx ? is.size() : 0, T{0});

    switch (layer.kind) {
      case LayerKind::dense: {
        if (param_grads) {
          auto& g = (*param_grads)[li];
          for (std::size_t o = 0; o < layer.out; ++o) {
            const T go = grad[o];
            g.bias[o] += go;
            if (go == T{0}) continue;
            T* row = g.weight.data() + o * layer.in;
            for (std::size_t i = 0; i < layer.in; ++i) row[i] += go * in[i];
          }
        }
        if (need_dx) {
          for (std::size_t o = 0; o < layer.out; ++o) {
            const T go = grad[o];
            if (go == T{0}) continue;
            const T* row = p.weight.data() + o * layer.in;
            for (std::size_t i = 0; i < layer.in; ++i) dx[i] += go * row[i];
          }
        }
        break;
      }
      case LayerKind::conv3x3: {
        const std::size_t s = layer.stride;
        LayerParams<T>* g = param_grads ? &(*param_grads)[li] : nullptr;
        for (std::size_t oc = 0; oc < os.channels; ++oc) {
          const T* gplane = grad.data() + oc * os.height * os.width;
          if (g) {
            T sum{0};
            for (std::size_t i = 0; i < os.height * os.width; ++i) sum += gplane[i];
            g->bias[oc] += sum;
          }
          for (std::size_t ic = 0; ic < is.channels; ++ic) {
            const T* src = in.data() + ic * is.height * is.width;
            T* dsrc = need_dx ? dx.data() + ic * is.height * is.width : nullptr;
            const std::size_t kbase = (oc * is.channels + ic) * 9;
            for (std::size_t kh = 0; kh < 3; ++kh) {
              for (std::size_t kw = 0; kw < 3; ++kw) {
                const T wv = p.weight[kbase + kh * 3 + kw];
                T wgrad{0};
                for (std::size_t oh = 0; oh < os.height; ++oh) {
                  const std::ptrdiff_t ih = static_cast<std::ptrdiff_t>(oh * s + kh) - 1;
                  if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(is.height)) continue;
                  const T* grow = gplane + oh * os.width;
                  for (std::size_t ow = 0; ow < os.width; ++ow) {
                    const std::ptrdiff_t iw = static_cast<std::ptrdiff_t>(ow * s + kw) - 1;
                    if (iw < 0 || iw >= static_cast<std::ptrdiff_t>(is.width)) continue;
                    const std::size_t at = static_cast<std::size_t>(ih) * is.width + static_cast<std::size_t>(iw);
                    wgrad += grow[ow] * src[at];
                    if (dsrc) dsrc[at] += grow[ow] * wv;
                  }
                }
                if (g) g->weight[kbase + kh * 3 + kw] += wgrad;
              }
            }
          }
        }
        break;
      }
      case LayerKind::relu:
        if (need_dx) {
          for (std::size_t i = 0; i < dx.size(); ++i) dx[i] = in[i] > T{0} ? grad[i] : T{0};
        }
        break;
      case LayerKind::maxpool2x2:
        if (need_dx) {
          const auto& index = trace.pool_index[li];
          for (std::size_t o = 0; o < index.size(); ++o) dx[index[o]] += grad[o];
        }
        break;
      case LayerKind::flatten:
        if (need_dx) dx = grad;
        break;
    }
    if (!need_dx) break;
    grad = std::move(dx);
  }
  if (input_grad) *input_grad = std::move(grad);
}

template <typename T>
std::vector<T> Network<T>::forward(const BasicTensor<T>& x) const {
  auto trace = run_forward(x);
  return std::move(trace.acts.back());
}

template <typename T>
std::size_t Network<T>::predict(const BasicTensor<T>& x) const {
  const auto logits = forward(x);
  return argmax(std::span<const T>(logits));
}

template <typename T>
T Network<T>::loss(const BasicTensor<T>& x, std::size_t label) const {
  const auto logits = forward(x);
  return softmax_ce(std::span<const T>(logits), label).loss;
}

template <typename T>
LossGradient<T> Network<T>::input_gradient(const BasicTensor<T>& x, std::size_t label) const {
  const Trace trace = run_forward(x);
  auto ce = softmax_ce(std::span<const T>(trace.acts.back()), label);
  std::vector<T> grad = std::move(ce.probs);
  grad[label] -= T{1};
  std::vector<T> dx;
  run_backward(trace, std::move(grad), nullptr, &dx);
  return {ce.loss, BasicTensor<T>(x.shape(), std::move(dx))};
}

template <typename T>
BatchGradient<T> Network<T>::param_gradient(std::span<const BasicTensor<T>> xs,
                                            std::span<const std::size_t> labels) const {
  if (xs.empty()) throw ConfigError("param_gradient: empty batch");
  if (xs.size() != labels.size()) throw ShapeError("param_gradient: images and labels differ in length");

  auto zero_set = [this] {
    ParamSet<T> set(params_.layers.size());
    for (std::size_t i = 0; i < set.size(); ++i) {
      set[i].weight.assign(params_.layers[i].weight.size(), T{0});
      set[i].bias.assign(params_.layers[i].bias.size(), T{0});
    }
    return set;
  };

  std::vector<ParamSet<T>> per_sample(xs.size());
  std::vector<T> losses(xs.size());
  parallel_for(xs.size(), [&](std::size_t n) {
    const Trace trace = run_forward(xs[n]);
    auto ce = softmax_ce(std::span<const T>(trace.acts.back()), labels[n]);
    losses[n] = ce.loss;
    std::vector<T> grad = std::move(ce.probs);
    grad[labels[n]] -= T{1};
    per_sample[n] = zero_set();
    run_backward(trace, std::move(grad), &per_sample[n], nullptr);
  });

  // Fixed-order reduction keeps the result independent of the worker count.
  BatchGradient<T> out{T{0}, zero_set()};
  const T inv = T{1} / static_cast<T>(xs.size());
  for (std::size_t n = 0; n < xs.size(); ++n) {
    out.mean_loss += losses[n];
    for (std::size_t li = 0; li < out.grads.size(); ++li) {
      auto& dst = out.grads[li];
      const auto& src = per_sample[n][li];
      for (std::size_t i = 0; i < dst.weight.size(); ++i) dst.weight[i] += src.weight[i];
      for (std::size_t i = 0; i < dst.bias.size(); ++i) dst.bias[i] += src.bias[i];
    }
  }
  out.mean_loss *= inv;
  for (auto& layer : out.grads) {
    for (T& v : layer.weight) v *= inv;
    for (T& v : layer.bias) v *= inv;
  }
  return out;
}

template <typename T>
T Network<T>::kink_margin(const BasicTensor<T>& x) const {
  const Trace trace = run_forward(x);
  T margin = std::numeric_limits<T>::infinity();
  for (std::size_t li = 0; li < def_.layers.size(); ++li) {
    const auto& in = trace.acts[li];
    if (def_.layers[li].kind == LayerKind::relu) {
      for (T v : in) margin = std::min(margin, std::abs(v));
    } else if (def_.layers[li].kind == LayerKind::maxpool2x2) {
      const Shape& is = trace.shapes[li];
      const Shape& os = trace.shapes[li + 1];
      const bool after_relu = li > 0 && def_.layers[li - 1].kind == LayerKind::relu;
      for (std::size_t c = 0; c < os.channels; ++c) {
        for (std::size_t oh = 0; oh < os.height; ++oh) {
          for (std::size_t ow = 0; ow < os.width; ++ow) {
            T window[4];
            for (std::size_t d = 0; d < 4; ++d) {
              window[d] = in[(c * is.height + 2 * oh + d / 2) * is.width + 2 * ow + d % 2];
            }
            std::sort(window, window + 4, std::greater<T>());
            // A window of dead relus stays dead under small perturbations.
            if (after_relu && window[0] == T{0}) continue;
            margin = std::min(margin, window[0] - window[1]);
          }
        }
      }
    }
  }
  return margin;
}

template class Network<float>;
template class Network<double>;

// ---------------------------------------------------------------------------
// Training

double InnerAttack::ramp(std::size_t epoch) const {
  if (warmup_epochs == 0 || epoch >= warmup_epochs) return 1.0;
  return static_cast<double>(epoch + 1) / static_cast<double>(warmup_epochs + 1);
}

void TrainConfig::validate() const {
  if (batch_size == 0) throw ConfigError("train: batch_size must be positive");
  if (!(learning_rate > 0.0)) throw ConfigError("train: learning_rate must be positive");
  if (adversarial) {
    if (adversarial->eps < 0.0) throw ConfigError("train: adversarial eps must be >= 0");
    if (adversarial->eps > 0.0 && !(adversarial->step > 0.0)) throw ConfigError("train: adversarial step must be > 0");
    if (adversarial->iterations < 1) throw ConfigError("train: adversarial iterations must be >= 1");
  }
}

nlohmann::json TrainConfig::to_json() const {
  nlohmann::json j{{"epochs", epochs},
                   {"batch_size", batch_size},
                   {"learning_rate", learning_rate},
                   {"seed", seed},
                   {"mode", to_string(mode())}};
  if (adversarial) {
    j["adversarial"] = {{"eps", adversarial->eps},
                        {"step", adversarial->step},
                        {"iterations", adversarial->iterations},
                        {"warmup_epochs", adversarial->warmup_epochs}};
  }
  return j;
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
  TrainConfig cfg;
  cfg.epochs = j.value("epochs", cfg.epochs);
  cfg.batch_size = j.value("batch_size", cfg.batch_size);
  cfg.learning_rate = j.value("learning_rate", cfg.learning_rate);
  cfg.seed = j.value("seed", cfg.seed);
  const std::string mode = j.value("mode", std::string("standard"));
  if (mode == "adversarial") {
    InnerAttack inner;
    if (j.contains("adversarial")) {
      const auto& a = j.at("adversarial");
      inner.eps = a.value("eps", inner.eps);
      inner.step = a.value("step", inner.step);
      inner.iterations = a.value("iterations", inner.iterations);
      inner.warmup_epochs = a.value("warmup_epochs", inner.warmup_epochs);
    }
    cfg.adversarial = inner;
  } else if (mode != "standard") {
    throw ConfigError("train: unknown mode '" + mode + "'");
  }
  cfg.validate();
  return cfg;
}

namespace {

Model run_training(const NetworkDef& def, const Dataset& data, const TrainConfig& cfg) {
  cfg.validate();
  data.validate();
  if (data.size() == 0) throw ConfigError("train: empty dataset");
  if (data.classes != def.classes) throw ShapeError("train: dataset class count does not match the network");

  Model net = Model::initialized(def, derive_seed(cfg.seed, 0));
  Rng order_rng(cfg.seed);
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  const float lr = static_cast<float>(cfg.learning_rate);
  const bool perturb = cfg.adversarial && cfg.adversarial->eps > 0.0;

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), order_rng);
    const std::uint64_t epoch_seed = derive_seed(cfg.seed, epoch + 1);
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t count = std::min(cfg.batch_size, order.size() - start);
      std::vector<Tensor> xs(count);
      std::vector<std::size_t> ys(count);
      for (std::size_t i = 0; i < count; ++i) {
        xs[i] = data.images[order[start + i]];
        ys[i] = data.labels[order[start + i]];
      }
      if (perturb) {
        AttackBudget budget;
        const double ramp = cfg.adversarial->ramp(epoch);
        budget.eps = cfg.adversarial->eps * ramp;
        budget.step = cfg.adversarial->step * ramp;
        budget.iterations = cfg.adversarial->iterations;
        parallel_for(count, [&](std::size_t i) {
          AttackBudget local = budget;
          local.seed = derive_seed(epoch_seed, start + i);
          xs[i] = pgd_attack(net, xs[i], ys[i], local);
        });
      }
      BatchGradient<float> step;
      try {
        step = net.param_gradient(std::span<const Tensor>(xs), std::span<const std::size_t>(ys));
      } catch (const BatchError& e) {
        // Inputs were validated up front, so per-sample failures here are overflow.
        throw NumericError("train: diverged in epoch " + std::to_string(epoch) + " (" + e.what() + ")");
      }
      if (!std::isfinite(step.mean_loss)) {
        throw NumericError("train: loss diverged in epoch " + std::to_string(epoch));
      }
      auto& layers = net.params().layers;
      for (std::size_t li = 0; li < layers.size(); ++li) {
        for (std::size_t i = 0; i < layers[li].weight.size(); ++i) layers[li].weight[i] -= lr * step.grads[li].weight[i];
        for (std::size_t i = 0; i < layers[li].bias.size(); ++i) layers[li].bias[i] -= lr * step.grads[li].bias[i];
      }
      for (const auto& layer : layers) {
        for (float v : layer.weight) {
          if (!std::isfinite(v)) throw NumericError("train: weights diverged in epoch " + std::to_string(epoch));
        }
        for (float v : layer.bias) {
          if (!std::isfinite(v)) throw NumericError("train: weights diverged in epoch " + std::to_string(epoch));
        }
      }
    }
  }

  std::vector<std::size_t> hits(data.size());
  parallel_for(data.size(), [&](std::size_t i) { hits[i] = net.predict(data.images[i]) == data.labels[i] ? 1 : 0; });
  auto& params = net.params();
  params.mode = cfg.mode();
  params.seed = cfg.seed;
  params.epochs = static_cast<std::uint32_t>(cfg.epochs);
  params.train_accuracy =
      static_cast<double>(std::accumulate(hits.begin(), hits.end(), std::size_t{0})) / static_cast<double>(data.size());
  return net;
}

}  // namespace

Model train_standard(const NetworkDef& def, const Dataset& data, const TrainConfig& cfg) {
  if (cfg.adversarial) throw ConfigError("train_standard: config carries an adversarial sub-config");
  return run_training(def, data, cfg);
}

Model train_adversarial(const NetworkDef& def, const Dataset& data, const TrainConfig& cfg) {
  if (!cfg.adversarial) throw ConfigError("train_adversarial: config lacks the inner attack budget");
  return run_training(def, data, cfg);
}

// ---------------------------------------------------------------------------
// PKW1 weights

namespace {

constexpr std::uint8_t kMagic[4] = {'P', 'K', 'W', '1'};
constexpr std::uint8_t kBiasFlag = 0x80;

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}
  std::span<const std::uint8_t> take(std::size_t n) {
    if (bytes_.size() - pos_ < n) throw FormatError("PKW1: truncated file at offset " + std::to_string(pos_));
    auto out = bytes_.subspan(pos_, n);
    pos_ += n;
    return out;
  }
  std::uint8_t u8() { return take(1)[0]; }
  std::uint32_t u32() {
    auto b = take(4);
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
  }
  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

struct Record {
  std::size_t layer;
  bool bias;
};

std::vector<Record> records_for(const NetworkDef& def) {
  std::vector<Record> out;
  for (std::size_t i = 0; i < def.layers.size(); ++i) {
    if (!def.layers[i].has_params()) continue;
    out.push_back({i, false});
    out.push_back({i, true});
  }
  return out;
}

}  // namespace

std::vector<std::uint8_t> encode_weights(const NetworkDef& def, const ModelParams<float>& params) {
  const auto records = records_for(def);
  std::vector<std::uint8_t> out(kMagic, kMagic + 4);
  std::vector<std::uint8_t> payload;
  put_u32(out, static_cast<std::uint32_t>(records.size()));
  for (const Record& r : records) {
    const auto dims = r.bias ? def.bias_dims(r.layer) : def.weight_dims(r.layer);
    const auto& values = r.bias ? params.layers.at(r.layer).bias : params.layers.at(r.layer).weight;
    if (values.size() != product(dims)) throw ShapeError("PKW1: parameter tensor does not match its definition");
    const auto tag = static_cast<std::uint8_t>(static_cast<std::uint8_t>(def.layers[r.layer].kind) | (r.bias ? kBiasFlag : 0));
    out.push_back(tag);
    put_u32(out, static_cast<std::uint32_t>(dims.size()));
    for (std::uint32_t d : dims) put_u32(out, d);
    const std::size_t payload_start = out.size();
    for (float v : values) put_u32(out, std::bit_cast<std::uint32_t>(v));
    payload.insert(payload.end(), out.begin() + static_cast<std::ptrdiff_t>(payload_start), out.end());
  }
  put_u32(out, crc32(payload));
  return out;
}

ModelParams<float> decode_weights(const NetworkDef& def, std::span<const std::uint8_t> bytes) {
  def.validate();
  Reader in(bytes);
  auto magic = in.take(4);
  if (!std::equal(magic.begin(), magic.end(), kMagic)) throw FormatError("PKW1: bad magic bytes");
  const auto records = records_for(def);
  const std::uint32_t count = in.u32();
  if (count != records.size()) {
    throw ShapeError("PKW1: file has " + std::to_string(count) + " tensors, definition expects " +
                     std::to_string(records.size()));
  }
  ModelParams<float> params;
  params.layers.resize(def.layers.size());
  std::vector<std::uint8_t> payload;
  for (const Record& r : records) {
    const std::uint8_t tag = in.u8();
    const auto expected_tag =
        static_cast<std::uint8_t>(static_cast<std::uint8_t>(def.layers[r.layer].kind) | (r.bias ? kBiasFlag : 0));
    if (tag != expected_tag) throw ShapeError("PKW1: layer kind tag mismatch for layer " + std::to_string(r.layer));
    const std::uint32_t rank = in.u32();
    const auto dims = r.bias ? def.bias_dims(r.layer) : def.weight_dims(r.layer);
    if (rank != dims.size()) throw ShapeError("PKW1: rank mismatch for layer " + std::to_string(r.layer));
    for (std::uint32_t d : dims) {
      if (in.u32() != d) throw ShapeError("PKW1: dimension mismatch for layer " + std::to_string(r.layer));
    }
    const std::size_t n = product(dims);
    auto raw = in.take(4 * n);
    payload.insert(payload.end(), raw.begin(), raw.end());
    std::vector<float> values(n);
    for (std::size_t i = 0; i < n; ++i) {
      const std::uint32_t word = static_cast<std::uint32_t>(raw[4 * i]) | (static_cast<std::uint32_t>(raw[4 * i + 1]) << 8) |
                                 (static_cast<std::uint32_t>(raw[4 * i + 2]) << 16) |
                                 (static_cast<std::uint32_t>(raw[4 * i + 3]) << 24);
      values[i] = std::bit_cast<float>(word);
    }
    (r.bias ? params.layers[r.layer].bias : params.layers[r.layer].weight) = std::move(values);
  }
  const std::uint32_t stored_crc = in.u32();
  if (in.remaining() != 0) throw FormatError("PKW1: trailing bytes after checksum");
  if (stored_crc != crc32(payload)) throw FormatError("PKW1: checksum mismatch");
  return params;
}

void save_weights(const Model& model, const std::filesystem::path& path) {
  const auto bytes = encode_weights(model.def(), model.params());
  write_file_atomic(path, bytes);
}

Model load_weights(const NetworkDef& def, const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  return Model(def, decode_weights(def, bytes));
}

std::string weights_fingerprint(const Model& model) {
  return sha256_hex(encode_weights(model.def(), model.params()));
}

}  // namespace pk
