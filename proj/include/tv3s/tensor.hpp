#pragma once

#include <cstdint>
#include <sstream>
#include <string>
#include <vector>

#include "tv3s/errors.hpp"

namespace tv3s {

// Dense row-major tensor. Deliberately minimal: shape + flat storage +
// rank-specific accessors. All numeric modules are templated on the scalar
// type so the same code runs in float (production) and double (gradient
// checking).
template <typename T>
struct Tensor {
  std::vector<int> shape;
  std::vector<T> data;

  Tensor() = default;

  explicit Tensor(std::vector<int> s, T fill = T(0)) : shape(std::move(s)) {
    data.assign(static_cast<size_t>(count(shape)), fill);
  }

  static Tensor from(std::vector<int> s, std::vector<T> d) {
    Tensor t;
    t.shape = std::move(s);
    if (count(t.shape) != static_cast<int64_t>(d.size()))
      throw ShapeError("tensor data size " + std::to_string(d.size()) +
                       " does not match shape " + shape_str(t.shape));
    t.data = std::move(d);
    return t;
  }

  static int64_t count(const std::vector<int>& s) {
    int64_t n = 1;
    for (int e : s) {
      if (e <= 0) throw ShapeError("non-positive extent in shape " + shape_str(s));
      n *= e;
    }
    return n;
  }

  int64_t numel() const { return static_cast<int64_t>(data.size()); }
  int ndim() const { return static_cast<int>(shape.size()); }

  // Negative indices count from the end, e.g. dim(-1) is the last extent.
  int dim(int i) const {
    int k = i < 0 ? ndim() + i : i;
    if (k < 0 || k >= ndim())
      throw ShapeError("dim index " + std::to_string(i) + " out of range for shape " + shape_str(shape));
    return shape[static_cast<size_t>(k)];
  }

  T* ptr() { return data.data(); }
  const T* ptr() const { return data.data(); }

  T& operator()(int i) { return data[static_cast<size_t>(i)]; }
  const T& operator()(int i) const { return data[static_cast<size_t>(i)]; }

  T& operator()(int i, int j) { return data[static_cast<size_t>(i) * shape[1] + j]; }
  const T& operator()(int i, int j) const { return data[static_cast<size_t>(i) * shape[1] + j]; }

  T& operator()(int i, int j, int k) {
    return data[(static_cast<size_t>(i) * shape[1] + j) * shape[2] + k];
  }
  const T& operator()(int i, int j, int k) const {
    return data[(static_cast<size_t>(i) * shape[1] + j) * shape[2] + k];
  }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }

  static std::string shape_str(const std::vector<int>& s) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << "]";
    return os.str();
  }
  std::string shape_str() const { return shape_str(shape); }
};

template <typename T>
void require_shape(const Tensor<T>& t, const std::vector<int>& want, const char* what) {
  if (t.shape != want)
    throw ShapeError(std::string(what) + ": expected shape " + Tensor<T>::shape_str(want) +
                     ", got " + t.shape_str());
}

template <typename T>
void require_ndim(const Tensor<T>& t, int nd, const char* what) {
  if (t.ndim() != nd)
    throw ShapeError(std::string(what) + ": expected rank " + std::to_string(nd) + " tensor, got " +
                     t.shape_str());
}

// A learnable tensor: value, accumulated gradient, and a stable name used for
// checkpoint manifests and diagnostics.
template <typename T>
struct Param {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;

  Param() = default;
  Param(std::string n, Tensor<T> v) : name(std::move(n)), value(std::move(v)) {
    grad = Tensor<T>(value.shape, T(0));
  }

  void zero_grad() { std::fill(grad.data.begin(), grad.data.end(), T(0)); }
};

}  // namespace tv3s
