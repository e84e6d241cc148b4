#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <random>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace fgst {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (auto e : s) n *= e;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

// Dense row-major tensor of 64-bit floats with an optional gradient buffer.
// `grad` is empty until a backward pass (or an explicit ensure_grad) allocates
// it; once allocated it always matches `data` in length.
struct Tensor {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;
  bool requires_grad = false;

  // Set by the tape that produced this tensor; null for leaves.
  const void* tape = nullptr;
  std::size_t node_index = 0;

  Tensor() = default;

  explicit Tensor(Shape s) : shape(std::move(s)) {
    if (shape.empty()) throw std::invalid_argument("tensor: empty shape");
    for (auto e : shape)
      if (e == 0) throw std::invalid_argument("tensor: zero extent in shape " + shape_str(shape));
    data.assign(shape_numel(shape), 0.0);
  }

  Tensor(Shape s, std::vector<double> d) : shape(std::move(s)), data(std::move(d)) {
    if (shape.empty()) throw std::invalid_argument("tensor: empty shape");
    for (auto e : shape)
      if (e == 0) throw std::invalid_argument("tensor: zero extent in shape " + shape_str(shape));
    if (shape_numel(shape) != data.size())
      throw std::invalid_argument("tensor: data length " + std::to_string(data.size()) +
                                  " does not match shape " + shape_str(shape));
  }

  std::size_t numel() const { return data.size(); }
  std::size_t rank() const { return shape.size(); }

  std::size_t extent(std::size_t axis) const {
    if (axis >= shape.size())
      throw std::invalid_argument("tensor: axis " + std::to_string(axis) + " out of range for " +
                                  shape_str(shape));
    return shape[axis];
  }

  // [C,H,W] indexing; callers in hot loops use raw pointers instead.
  double& at3(std::size_t c, std::size_t y, std::size_t x) {
    return data[(c * shape[1] + y) * shape[2] + x];
  }
  double at3(std::size_t c, std::size_t y, std::size_t x) const {
    return data[(c * shape[1] + y) * shape[2] + x];
  }
  double& at2(std::size_t r, std::size_t c) { return data[r * shape[1] + c]; }
  double at2(std::size_t r, std::size_t c) const { return data[r * shape[1] + c]; }

  void ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
  }
  void zero_grad() {
    if (!grad.empty()) grad.assign(data.size(), 0.0);
  }
};

using TensorPtr = std::shared_ptr<Tensor>;

// Per-frame feature maps ([C,H,W]) batched over time.
using FrameSeq = std::vector<TensorPtr>;

inline TensorPtr make_tensor(Shape s) { return std::make_shared<Tensor>(std::move(s)); }

inline TensorPtr make_tensor(Shape s, std::vector<double> d) {
  return std::make_shared<Tensor>(std::move(s), std::move(d));
}

inline TensorPtr make_param(Shape s) {
  auto t = make_tensor(std::move(s));
  t->requires_grad = true;
  return t;
}

inline TensorPtr zeros_like(const Tensor& t) { return make_tensor(t.shape); }

inline TensorPtr clone_tensor(const Tensor& t) {
  auto out = make_tensor(t.shape);
  out->data = t.data;
  return out;
}

inline bool same_shape(const Tensor& a, const Tensor& b) { return a.shape == b.shape; }

inline void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (!same_shape(a, b))
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a.shape) +
                                " vs " + shape_str(b.shape));
}

inline void fill_uniform(Tensor& t, std::mt19937_64& rng, double lo, double hi) {
  std::uniform_real_distribution<double> dist(lo, hi);
  for (auto& v : t.data) v = dist(rng);
}

// Init used for all trainable weights: U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
inline void init_fan_in(Tensor& t, std::size_t fan_in, std::mt19937_64& rng) {
  double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  fill_uniform(t, rng, -bound, bound);
}

inline double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

}  // namespace fgst
