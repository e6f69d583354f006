#pragma once

#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "betoken/errors.hpp"

namespace betoken::numcore {

// Dense row-major tensor. float carries training, double carries the
// verification oracles; everything downstream is templated on the scalar.
template <typename T>
struct Tensor {
  std::vector<int> shape;
  std::vector<T> data;

  Tensor() = default;

  explicit Tensor(std::vector<int> s, T fill = T(0)) : shape(std::move(s)) {
    data.assign(checked_size(shape), fill);
  }

  static Tensor from(std::vector<int> s, std::vector<T> values) {
    Tensor t;
    t.shape = std::move(s);
    if (checked_size(t.shape) != values.size()) {
      throw InvalidArgumentError("tensor: shape does not match value count");
    }
    t.data = std::move(values);
    return t;
  }

  static Tensor scalar(T v) { return from({1}, {v}); }

  size_t size() const { return data.size(); }
  int rank() const { return static_cast<int>(shape.size()); }

  int extent(int axis) const {
    if (axis < 0 || axis >= rank()) throw InvalidArgumentError("tensor: axis out of range");
    return shape[axis];
  }

  int rows() const { return rank() == 2 ? shape[0] : (rank() == 1 ? 1 : bad_2d()); }
  int cols() const { return rank() == 2 ? shape[1] : (rank() == 1 ? shape[0] : bad_2d()); }

  T* row(int r) { return data.data() + static_cast<size_t>(r) * cols(); }
  const T* row(int r) const { return data.data() + static_cast<size_t>(r) * cols(); }

  T& at(int r, int c) { return data[static_cast<size_t>(r) * cols() + c]; }
  T at(int r, int c) const { return data[static_cast<size_t>(r) * cols() + c]; }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }

  bool all_finite() const {
    for (const T v : data) {
      if (!std::isfinite(static_cast<double>(v))) return false;
    }
    return true;
  }

  void fill(T v) { std::fill(data.begin(), data.end(), v); }

  std::string shape_str() const {
    std::ostringstream os;
    os << "[";
    for (int i = 0; i < rank(); ++i) os << (i ? "," : "") << shape[i];
    os << "]";
    return os.str();
  }

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> out;
    out.shape = shape;
    out.data.resize(data.size());
    for (size_t i = 0; i < data.size(); ++i) out.data[i] = static_cast<U>(data[i]);
    return out;
  }

 private:
  static size_t checked_size(const std::vector<int>& s) {
    size_t n = 1;
    for (int e : s) {
      if (e <= 0) throw InvalidArgumentError("tensor: non-positive extent");
      n *= static_cast<size_t>(e);
    }
    return n;
  }
  [[noreturn]] int bad_2d() const { throw InvalidArgumentError("tensor: expected rank <= 2, got " + shape_str()); }
};

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

}  // namespace betoken::numcore
