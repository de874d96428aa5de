#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include "simpleconv/tensor.hpp"

namespace simpleconv {

/// Bias-corrected Adam. Moment buffers are laid out to match the parameter
/// list handed to init(); every step checks the pairing still holds.
template <typename T>
struct AdamState {
  std::vector<std::vector<T>> m, v;
  std::int64_t t = 0;
  T lr = T(1e-3);
  T beta1 = T(0.9);
  T beta2 = T(0.999);
  T eps = T(1e-8);

  void init(const std::vector<Tensor<T>*>& params) {
    m.clear();
    v.clear();
    for (const Tensor<T>* p : params) {
      m.emplace_back(p->data.size(), T(0));
      v.emplace_back(p->data.size(), T(0));
    }
    t = 0;
  }

  bool initialized() const { return !m.empty(); }
};

template <typename T>
void adam_step(const std::vector<Tensor<T>*>& params, AdamState<T>& state) {
  if (state.lr <= T(0)) throw std::invalid_argument("adam_step: lr must be positive");
  if (!state.initialized() && !params.empty()) state.init(params);
  if (params.size() != state.m.size())
    throw std::invalid_argument("adam_step: state does not match parameter list");
  state.t += 1;
  const T bc1 = T(1) - std::pow(state.beta1, static_cast<T>(state.t));
  const T bc2 = T(1) - std::pow(state.beta2, static_cast<T>(state.t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor<T>& p = *params[i];
    if (p.grad.size() != p.data.size())
      throw std::invalid_argument("adam_step: parameter has no gradient buffer");
    if (state.m[i].size() != p.data.size())
      throw std::invalid_argument("adam_step: moment shape mismatch");
    T* m = state.m[i].data();
    T* v = state.v[i].data();
    const T* g = p.grad.data();
    T* w = p.data.data();
    for (std::size_t j = 0; j < p.data.size(); ++j) {
      m[j] = state.beta1 * m[j] + (T(1) - state.beta1) * g[j];
      v[j] = state.beta2 * v[j] + (T(1) - state.beta2) * g[j] * g[j];
      const T mh = m[j] / bc1;
      const T vh = v[j] / bc2;
      w[j] -= state.lr * mh / (std::sqrt(vh) + state.eps);
    }
  }
}

}  // namespace simpleconv
