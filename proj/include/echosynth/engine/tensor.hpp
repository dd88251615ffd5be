#pragma once

#include <cstdint>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "echosynth/engine/rng.hpp"

namespace echosynth::engine {

class Tape;

using Shape = std::vector<int>;

inline std::int64_t shape_numel(const Shape& s) {
  std::int64_t n = 1;
  for (int d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

// Dense row-major f32 tensor. Copies share the payload (value + grad); the
// grad buffer is allocated on first use so untouched tensors stay light.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape) {
    Tensor t;
    t.shape_ = std::move(shape);
    t.check_shape();
    t.payload_ = std::make_shared<Payload>();
    t.payload_->value.assign(static_cast<std::size_t>(shape_numel(t.shape_)), 0.0f);
    return t;
  }

  static Tensor full(Shape shape, float fill) {
    Tensor t = zeros(std::move(shape));
    for (auto& v : t.payload_->value) v = fill;
    return t;
  }

  static Tensor from_vector(Shape shape, std::vector<float> values) {
    if (shape_numel(shape) != static_cast<std::int64_t>(values.size()))
      throw std::invalid_argument("Tensor::from_vector: " + std::to_string(values.size()) +
                                  " values for shape " + shape_str(shape));
    Tensor t;
    t.shape_ = std::move(shape);
    t.check_shape();
    t.payload_ = std::make_shared<Payload>();
    t.payload_->value = std::move(values);
    return t;
  }

  static Tensor scalar(float v) { return from_vector({1}, {v}); }

  static Tensor randn(Shape shape, Rng& rng, float stddev) {
    Tensor t = zeros(std::move(shape));
    for (auto& v : t.payload_->value) v = static_cast<float>(rng.normal() * stddev);
    return t;
  }

  bool defined() const { return payload_ != nullptr; }
  const Shape& shape() const { return shape_; }
  int ndim() const { return static_cast<int>(shape_.size()); }
  int dim(int i) const { return shape_[static_cast<std::size_t>(i)]; }
  std::int64_t numel() const { return defined() ? static_cast<std::int64_t>(payload_->value.size()) : 0; }

  float* data() { return payload_->value.data(); }
  const float* data() const { return payload_->value.data(); }
  std::vector<float>& values() { return payload_->value; }
  const std::vector<float>& values() const { return payload_->value; }

  float item() const {
    if (numel() != 1) throw std::invalid_argument("Tensor::item: numel " + std::to_string(numel()));
    return payload_->value[0];
  }

  bool has_grad() const { return defined() && !payload_->grad.empty(); }

  // Allocates (zero-filled) on first call.
  float* grad() {
    if (payload_->grad.empty()) payload_->grad.assign(payload_->value.size(), 0.0f);
    return payload_->grad.data();
  }
  const std::vector<float>& grad_vec() const { return payload_->grad; }

  void zero_grad() {
    if (defined() && !payload_->grad.empty())
      payload_->grad.assign(payload_->value.size(), 0.0f);
  }

  // Deep copy of the value; no grad, no tape linkage. Gradients flowing into
  // the copy never leak back into the source.
  Tensor detached_copy() const {
    Tensor t;
    t.shape_ = shape_;
    t.payload_ = std::make_shared<Payload>();
    t.payload_->value = payload_->value;
    return t;
  }

  // Set by ops when recording; -1 means not on any tape.
  int node = -1;
  const Tape* tape = nullptr;

 private:
  struct Payload {
    std::vector<float> value;
    std::vector<float> grad;  // empty until first grad() call
  };

  void check_shape() const {
    for (int d : shape_)
      if (d <= 0) throw std::invalid_argument("Tensor: non-positive extent in " + shape_str(shape_));
  }

  Shape shape_;
  std::shared_ptr<Payload> payload_;
};

}  // namespace echosynth::engine
