#pragma once

// Shared oracles for the suite: a dead-simple convolution reference, central
// finite differences for gradient verification, and small tensor factories.
// Everything here is written independently of the library's fast paths so a
// bug in the implementation cannot hide in its own test.

#include <cmath>
#include <functional>
#include <vector>

#include "simpleconv/rng.hpp"
#include "simpleconv/tensor.hpp"

namespace testutil {

using simpleconv::Rng;
using simpleconv::Tensor;

inline Tensor<double> random_tensor(const std::vector<int>& shape, Rng& rng, double scale = 1.0) {
  Tensor<double> t(shape);
  for (double& v : t.data) v = scale * rng.normal();
  return t;
}

/// Reference conv1d: the definition written as four nested loops, zero
/// "same" padding with left shift floor((S-1)/2).
inline Tensor<double> conv1d_oracle(const Tensor<double>& x, const Tensor<double>& w,
                                    const Tensor<double>& bias) {
  const int B = x.dim(0), Cin = x.dim(1), T = x.dim(2);
  const int Cout = w.dim(0), S = w.dim(2);
  const int shift = (S - 1) / 2;
  Tensor<double> y({B, Cout, T});
  for (int b = 0; b < B; ++b)
    for (int o = 0; o < Cout; ++o)
      for (int t = 0; t < T; ++t) {
        double acc = bias(o);
        for (int c = 0; c < Cin; ++c)
          for (int s = 0; s < S; ++s) {
            const int src = t + s - shift;
            if (src >= 0 && src < T) acc += x(b, c, src) * w(o, c, s);
          }
        y(b, o, t) = acc;
      }
  return y;
}

inline double max_abs_diff(const Tensor<double>& a, const Tensor<double>& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.data.size(); ++i)
    m = std::max(m, std::abs(a.data[i] - b.data[i]));
  return m;
}

/// Relative error with the scale floored at 1: small absolute errors on
/// small gradients never explode the ratio.
inline double rel_err(double a, double b) {
  return std::abs(a - b) / std::max({1.0, std::abs(a), std::abs(b)});
}

/// Central finite differences of scalar() w.r.t. every element of `input`,
/// compared against `analytic`. Returns the worst relative error. `mask`
/// (optional) skips elements, used to stay away from kinks.
inline double fd_check(Tensor<double>& input, const Tensor<double>& analytic,
                       const std::function<double()>& scalar, double h = 1e-6,
                       const std::function<bool(std::size_t)>& mask = nullptr) {
  double worst = 0.0;
  for (std::size_t i = 0; i < input.data.size(); ++i) {
    if (mask && !mask(i)) continue;
    const double keep = input.data[i];
    input.data[i] = keep + h;
    const double up = scalar();
    input.data[i] = keep - h;
    const double down = scalar();
    input.data[i] = keep;
    const double fd = (up - down) / (2.0 * h);
    worst = std::max(worst, rel_err(analytic.data[i], fd));
  }
  return worst;
}

/// Projection loss L = sum(proj * y): turns any tensor-valued op into a
/// scalar whose gradient w.r.t. y is exactly proj.
inline double project(const Tensor<double>& y, const Tensor<double>& proj) {
  double acc = 0.0;
  for (std::size_t i = 0; i < y.data.size(); ++i) acc += y.data[i] * proj.data[i];
  return acc;
}

}  // namespace testutil
