#pragma once

// Dense row-major tensor used by the network ops. Training runs in float,
// gradient-check tests instantiate the same code in double.

#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace simpleconv {

template <typename T>
struct Tensor {
  std::vector<int> shape;
  std::vector<T> data;
  bool requires_grad = false;
  std::vector<T> grad;  // same length as data when requires_grad

  Tensor() = default;

  explicit Tensor(std::vector<int> shape_, bool requires_grad_ = false)
      : shape(std::move(shape_)), requires_grad(requires_grad_) {
    for (int e : shape)
      if (e < 0) throw std::invalid_argument("Tensor: negative extent");
    data.assign(static_cast<std::size_t>(count(shape)), T(0));
    if (requires_grad) grad.assign(data.size(), T(0));
  }

  static std::int64_t count(const std::vector<int>& s) {
    std::int64_t n = 1;
    for (int e : s) n *= e;
    return n;
  }

  static Tensor from(std::vector<int> shape_, std::initializer_list<T> values) {
    Tensor t(std::move(shape_));
    if (static_cast<std::size_t>(t.size()) != values.size())
      throw std::invalid_argument("Tensor::from: value count does not match shape");
    std::copy(values.begin(), values.end(), t.data.begin());
    return t;
  }

  std::int64_t size() const { return static_cast<std::int64_t>(data.size()); }
  int ndim() const { return static_cast<int>(shape.size()); }
  int dim(int i) const { return shape.at(static_cast<std::size_t>(i)); }

  T& operator()(int i) { return data[static_cast<std::size_t>(i)]; }
  const T& operator()(int i) const { return data[static_cast<std::size_t>(i)]; }
  T& operator()(int i, int j) { return data[static_cast<std::size_t>(i) * shape[1] + j]; }
  const T& operator()(int i, int j) const {
    return data[static_cast<std::size_t>(i) * shape[1] + j];
  }
  T& operator()(int i, int j, int k) {
    return data[(static_cast<std::size_t>(i) * shape[1] + j) * shape[2] + k];
  }
  const T& operator()(int i, int j, int k) const {
    return data[(static_cast<std::size_t>(i) * shape[1] + j) * shape[2] + k];
  }

  void ensure_grad() {
    requires_grad = true;
    if (grad.size() != data.size()) grad.assign(data.size(), T(0));
  }

  void zero_grad() {
    std::fill(grad.begin(), grad.end(), T(0));
  }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }

  std::string shape_str() const {
    std::string s = "[";
    for (std::size_t i = 0; i < shape.size(); ++i)
      s += (i ? "," : "") + std::to_string(shape[i]);
    return s + "]";
  }
};

template <typename T>
void require_shape(const Tensor<T>& t, const std::vector<int>& shape, const char* what) {
  if (t.shape != shape)
    throw std::invalid_argument(std::string(what) + ": shape mismatch, got " + t.shape_str());
}

template <typename T>
void require_ndim(const Tensor<T>& t, int nd, const char* what) {
  if (t.ndim() != nd)
    throw std::invalid_argument(std::string(what) + ": expected " + std::to_string(nd) +
                                "-d tensor, got " + t.shape_str());
}

}  // namespace simpleconv
