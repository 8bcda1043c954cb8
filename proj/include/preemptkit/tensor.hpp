#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "preemptkit/error.hpp"

namespace pk {

// Image layout (channels, height, width), row-major within a channel.
struct Shape {
  std::size_t channels = 0;
  std::size_t height = 0;
  std::size_t width = 0;

  std::size_t size() const { return channels * height * width; }
  bool operator==(const Shape&) const = default;
  std::string str() const;
};

// Dense [C,H,W] array. float is the production type; double is used by the
// gradient checks.
template <typename T>
class BasicTensor {
 public:
  using value_type = T;

  BasicTensor() = default;
  explicit BasicTensor(Shape shape, T fill = T{0}) : shape_(shape), data_(shape.size(), fill) {}
  BasicTensor(Shape shape, std::vector<T> data) : shape_(shape), data_(std::move(data)) {
    if (data_.size() != shape_.size()) {
      throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                       " does not match shape " + shape_.str());
    }
  }

  const Shape& shape() const { return shape_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::span<const T> data() const { return data_; }
  std::span<T> data() { return data_; }
  const std::vector<T>& values() const { return data_; }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  T& at(std::size_t c, std::size_t h, std::size_t w) {
    return data_[(c * shape_.height + h) * shape_.width + w];
  }
  const T& at(std::size_t c, std::size_t h, std::size_t w) const {
    return data_[(c * shape_.height + h) * shape_.width + w];
  }

  template <typename U>
  BasicTensor<U> cast() const {
    std::vector<U> out(data_.begin(), data_.end());
    return BasicTensor<U>(shape_, std::move(out));
  }

  bool operator==(const BasicTensor&) const = default;

 private:
  Shape shape_;
  std::vector<T> data_;
};

using Tensor = BasicTensor<float>;
using TensorD = BasicTensor<double>;

// Elementwise building blocks. Binary forms throw ShapeError on mismatch.
template <typename T>
BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b);
template <typename T>
BasicTensor<T> add(const BasicTensor<T>& a, T scalar);
template <typename T>
BasicTensor<T> sub(const BasicTensor<T>& a, const BasicTensor<T>& b);
template <typename T>
BasicTensor<T> scale(const BasicTensor<T>& a, T factor);
template <typename T>
BasicTensor<T> clamp01(const BasicTensor<T>& a);
// sign(0) == 0.
template <typename T>
BasicTensor<T> sign(const BasicTensor<T>& a);

template <typename T>
double linf_distance(const BasicTensor<T>& a, const BasicTensor<T>& b);
template <typename T>
double l2_distance(const BasicTensor<T>& a, const BasicTensor<T>& b);
template <typename T>
double l2_norm(const BasicTensor<T>& a);
// Cosine of the angle between two tensors viewed as flat vectors; 0 if either is zero.
template <typename T>
double cosine_similarity(const BasicTensor<T>& a, const BasicTensor<T>& b);

// Projection onto the L-inf ball of radius eps around x_ref intersected with
// the pixel cube [0,1]. Throws ConfigError when eps <= 0.
template <typename T>
BasicTensor<T> project_linf(const BasicTensor<T>& x_ref, const BasicTensor<T>& cand, double eps);

// L2 counterpart: rescales the offset to length eps when it is longer, then clamps.
template <typename T>
BasicTensor<T> project_l2(const BasicTensor<T>& x_ref, const BasicTensor<T>& cand, double eps);

template <typename T>
struct CrossEntropy {
  T loss;
  std::vector<T> probs;
};

// Max-subtracted softmax followed by -ln(max(p[label], 1e-12)).
template <typename T>
CrossEntropy<T> softmax_ce(std::span<const T> logits, std::size_t label);

// Index of the largest logit, lowest index on ties.
template <typename T>
std::size_t argmax(std::span<const T> values);

// Central differences (f(x+h e_i) - f(x-h e_i)) / 2h, evaluated in double.
TensorD finite_diff_grad(const std::function<double(const TensorD&)>& f, const TensorD& x, double h);

}  // namespace pk
