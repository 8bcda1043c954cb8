#include "preemptkit/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace pk {

std::string Shape::str() const {
  return "(" + std::to_string(channels) + "," + std::to_string(height) + "," + std::to_string(width) + ")";
}

namespace {

template <typename T>
void require_same_shape(const BasicTensor<T>& a, const BasicTensor<T>& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + a.shape().str() + " vs " + b.shape().str());
  }
}

template <typename T, typename F>
BasicTensor<T> map(const BasicTensor<T>& a, F&& fn) {
  BasicTensor<T> out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = fn(a[i]);
  return out;
}

template <typename T, typename F>
BasicTensor<T> zip(const BasicTensor<T>& a, const BasicTensor<T>& b, const char* op, F&& fn) {
  require_same_shape(a, b, op);
  BasicTensor<T> out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = fn(a[i], b[i]);
  return out;
}

}  // namespace

template <typename T>
BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  return zip(a, b, "add", [](T u, T v) { return u + v; });
}

template <typename T>
BasicTensor<T> add(const BasicTensor<T>& a, T scalar) {
  return map(a, [scalar](T u) { return u + scalar; });
}

template <typename T>
BasicTensor<T> sub(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  return zip(a, b, "sub", [](T u, T v) { return u - v; });
}

template <typename T>
BasicTensor<T> scale(const BasicTensor<T>& a, T factor) {
  return map(a, [factor](T u) { return u * factor; });
}

template <typename T>
BasicTensor<T> clamp01(const BasicTensor<T>& a) {
  return map(a, [](T u) { return std::clamp(u, T{0}, T{1}); });
}

template <typename T>
BasicTensor<T> sign(const BasicTensor<T>& a) {
  return map(a, [](T u) { return u > T{0} ? T{1} : (u < T{0} ? T{-1} : T{0}); });
}

template <typename T>
double linf_distance(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  require_same_shape(a, b, "linf_distance");
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    worst = std::max(worst, std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i])));
  }
  return worst;
}

template <typename T>
double l2_distance(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  require_same_shape(a, b, "l2_distance");
  double sum = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
    sum += d * d;
  }
  return std::sqrt(sum);
}

template <typename T>
double l2_norm(const BasicTensor<T>& a) {
  double sum = 0.0;
  for (T v : a.data()) sum += static_cast<double>(v) * static_cast<double>(v);
  return std::sqrt(sum);
}

template <typename T>
double cosine_similarity(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  require_same_shape(a, b, "cosine_similarity");
  double dot = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) dot += static_cast<double>(a[i]) * static_cast<double>(b[i]);
  const double denom = l2_norm(a) * l2_norm(b);
  return denom > 0.0 ? dot / denom : 0.0;
}

template <typename T>
BasicTensor<T> project_linf(const BasicTensor<T>& x_ref, const BasicTensor<T>& cand, double eps) {
  if (!(eps > 0.0)) throw ConfigError("project_linf: eps must be > 0, got " + std::to_string(eps));
  const T radius = static_cast<T>(eps);
  return zip(x_ref, cand, "project_linf", [radius](T ref, T c) {
    return std::clamp(std::clamp(c, ref - radius, ref + radius), T{0}, T{1});
  });
}

template <typename T>
BasicTensor<T> project_l2(const BasicTensor<T>& x_ref, const BasicTensor<T>& cand, double eps) {
  if (!(eps > 0.0)) throw ConfigError("project_l2: eps must be > 0, got " + std::to_string(eps));
  const double norm = l2_distance(cand, x_ref);
  if (norm <= eps) return clamp01(cand);
  const double factor = eps / norm;
  BasicTensor<T> out(x_ref.shape());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double delta = (static_cast<double>(cand[i]) - static_cast<double>(x_ref[i])) * factor;
    out[i] = std::clamp(static_cast<T>(static_cast<double>(x_ref[i]) + delta), T{0}, T{1});
  }
  return out;
}

template <typename T>
CrossEntropy<T> softmax_ce(std::span<const T> logits, std::size_t label) {
  if (logits.size() < 2) throw ShapeError("softmax_ce: need at least 2 logits");
  if (label >= logits.size()) {
    throw ConfigError("softmax_ce: label " + std::to_string(label) + " out of range for " +
                      std::to_string(logits.size()) + " classes");
  }
  const T peak = *std::max_element(logits.begin(), logits.end());
  std::vector<T> probs(logits.size());
  T total{0};
  for (std::size_t k = 0; k < logits.size(); ++k) {
    probs[k] = std::exp(logits[k] - peak);
    total += probs[k];
  }
  for (T& p : probs) p /= total;
  const T loss = -std::log(std::max(probs[label], static_cast<T>(1e-12)));
  if (!std::isfinite(loss)) throw NumericError("softmax_ce: non-finite loss");
  return {loss, std::move(probs)};
}

template <typename T>
std::size_t argmax(std::span<const T> values) {
  std::size_t best = 0;
  for (std::size_t k = 1; k < values.size(); ++k) {
    if (values[k] > values[best]) best = k;
  }
  return best;
}

TensorD finite_diff_grad(const std::function<double(const TensorD&)>& f, const TensorD& x, double h) {
  if (!(h > 0.0)) throw ConfigError("finite_diff_grad: h must be > 0");
  TensorD grad(x.shape());
  TensorD probe = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    probe[i] = x[i] + h;
    const double up = f(probe);
    probe[i] = x[i] - h;
    const double down = f(probe);
    probe[i] = x[i];
    if (!std::isfinite(up) || !std::isfinite(down)) {
      throw NumericError("finite_diff_grad: non-finite function value at coordinate " + std::to_string(i));
    }
    grad[i] = (up - down) / (2.0 * h);
  }
  return grad;
}

#define PK_INSTANTIATE(T)                                                                       \
  template BasicTensor<T> add(const BasicTensor<T>&, const BasicTensor<T>&);                    \
  template BasicTensor<T> add(const BasicTensor<T>&, T);                                        \
  template BasicTensor<T> sub(const BasicTensor<T>&, const BasicTensor<T>&);                    \
  template BasicTensor<T> scale(const BasicTensor<T>&, T);                                      \
  template BasicTensor<T> clamp01(const BasicTensor<T>&);                                       \
  template BasicTensor<T> sign(const BasicTensor<T>&);                                          \
  template double linf_distance(const BasicTensor<T>&, const BasicTensor<T>&);                  \
  template double l2_distance(const BasicTensor<T>&, const BasicTensor<T>&);                    \
  template double l2_norm(const BasicTensor<T>&);                                               \
  template double cosine_similarity(const BasicTensor<T>&, const BasicTensor<T>&);              \
  template BasicTensor<T> project_linf(const BasicTensor<T>&, const BasicTensor<T>&, double);   \
  template BasicTensor<T> project_l2(const BasicTensor<T>&, const BasicTensor<T>&, double);     \
  template CrossEntropy<T> softmax_ce(std::span<const T>, std::size_t);                         \
  template std::size_t argmax(std::span<const T>);

PK_INSTANTIATE(float)
PK_INSTANTIATE(double)

#undef PK_INSTANTIATE

}  // namespace pk
