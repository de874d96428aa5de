#pragma once

// Forward and backward passes for the layer set of the network:
// same-padded 1D convolution, batch norm (train / eval / capture-stats),
// ReLU, max pooling, global time averaging, affine head and the
// softmax cross-entropy loss. All ops are pure functions of their inputs
// plus the explicit state objects they are handed.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "simpleconv/tensor.hpp"

namespace simpleconv {

// ---------------------------------------------------------------------------
// conv1d, zero "same" padding, output length equals input length.
// y[b,o,t] = bias[o] + sum_{c,s} x[b,c,t+s-floor((S-1)/2)] * w[o,c,s]
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> conv1d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias) {
  require_ndim(x, 3, "conv1d x");
  require_ndim(w, 3, "conv1d w");
  require_ndim(bias, 1, "conv1d bias");
  const int B = x.dim(0), Cin = x.dim(1), Tn = x.dim(2);
  const int Cout = w.dim(0), S = w.dim(2);
  if (w.dim(1) != Cin)
    throw std::invalid_argument("conv1d: input channels disagree, x " + x.shape_str() +
                                " vs w " + w.shape_str());
  if (bias.dim(0) != Cout) throw std::invalid_argument("conv1d: bias length != Cout");
  if (Tn < 1) throw std::invalid_argument("conv1d: time length must be >= 1");

  const int shift = (S - 1) / 2;
  Tensor<T> y({B, Cout, Tn});
  for (int b = 0; b < B; ++b) {
    for (int o = 0; o < Cout; ++o) {
      T* yr = &y(b, o, 0);
      std::fill(yr, yr + Tn, bias(o));
      for (int c = 0; c < Cin; ++c) {
        const T* xr = &x(b, c, 0);
        for (int s = 0; s < S; ++s) {
          const T wv = w(o, c, s);
          const int off = s - shift;
          const int t0 = std::max(0, -off);
          const int t1 = std::min(Tn, Tn - off);
          for (int t = t0; t < t1; ++t) yr[t] += wv * xr[t + off];
        }
      }
    }
  }
  return y;
}

template <typename T>
struct Conv1dGrads {
  Tensor<T> dx, dw, db;
};

template <typename T>
Conv1dGrads<T> conv1d_backward(const Tensor<T>& gy, const Tensor<T>& x, const Tensor<T>& w) {
  require_ndim(gy, 3, "conv1d_backward gy");
  require_ndim(x, 3, "conv1d_backward x");
  require_ndim(w, 3, "conv1d_backward w");
  const int B = x.dim(0), Cin = x.dim(1), Tn = x.dim(2);
  const int Cout = w.dim(0), S = w.dim(2);
  if (w.dim(1) != Cin) throw std::invalid_argument("conv1d_backward: channel mismatch");
  require_shape(gy, {B, Cout, Tn}, "conv1d_backward gy");

  const int shift = (S - 1) / 2;
  Conv1dGrads<T> g{Tensor<T>({B, Cin, Tn}), Tensor<T>({Cout, Cin, S}), Tensor<T>({Cout})};

  for (int b = 0; b < B; ++b) {
    for (int o = 0; o < Cout; ++o) {
      const T* gr = &gy(b, o, 0);
      T acc = T(0);
      for (int t = 0; t < Tn; ++t) acc += gr[t];
      g.db(o) += acc;
      for (int c = 0; c < Cin; ++c) {
        const T* xr = &x(b, c, 0);
        T* dxr = &g.dx(b, c, 0);
        for (int s = 0; s < S; ++s) {
          const int off = s - shift;
          const int t0 = std::max(0, -off);
          const int t1 = std::min(Tn, Tn - off);
          const T wv = w(o, c, s);
          T wacc = T(0);
          for (int t = t0; t < t1; ++t) {
            wacc += gr[t] * xr[t + off];
            dxr[t + off] += wv * gr[t];
          }
          g.dw(o, c, s) += wacc;
        }
      }
    }
  }
  return g;
}

// ---------------------------------------------------------------------------
// Batch normalisation over (batch, time) per channel.
// ---------------------------------------------------------------------------

enum class BnMode { kTrain, kEval, kCaptureStats };

template <typename T>
struct BatchNormState {
  Tensor<T> gamma, beta;
  std::vector<T> running_mean, running_var;
  T momentum = T(0.1);
  T eps = T(1e-5);
  BnMode mode = BnMode::kTrain;
  bool stats_valid = false;  // true once Train or CaptureStats has run

  BatchNormState() = default;
  explicit BatchNormState(int channels)
      : gamma({channels}, true),
        beta({channels}, true),
        running_mean(static_cast<std::size_t>(channels), T(0)),
        running_var(static_cast<std::size_t>(channels), T(1)) {
    std::fill(gamma.data.begin(), gamma.data.end(), T(1));
  }

  int channels() const { return gamma.dim(0); }
};

template <typename T>
struct BatchNormCache {
  std::vector<T> mean, inv_std;  // statistics the forward pass normalised with
  BnMode mode = BnMode::kTrain;
};

template <typename T>
Tensor<T> batchnorm(const Tensor<T>& x, BatchNormState<T>& state, BnMode mode,
                    BatchNormCache<T>* cache = nullptr) {
  require_ndim(x, 3, "batchnorm x");
  const int B = x.dim(0), C = x.dim(1), Tn = x.dim(2);
  if (C != state.channels()) throw std::invalid_argument("batchnorm: channel mismatch");
  const std::int64_t n = static_cast<std::int64_t>(B) * Tn;
  if (mode == BnMode::kTrain && n < 2)
    throw std::invalid_argument("batchnorm: Train mode requires B*T >= 2");
  if (mode == BnMode::kEval && !state.stats_valid)
    throw std::logic_error("batchnorm: uninitialized statistics (Eval before Train/CaptureStats)");
  state.mode = mode;

  std::vector<T> mean(static_cast<std::size_t>(C)), var(static_cast<std::size_t>(C));
  if (mode == BnMode::kEval) {
    mean = state.running_mean;
    var = state.running_var;
  } else {
    // population statistics over (B, T)
    for (int c = 0; c < C; ++c) {
      T sum = T(0), sq = T(0);
      for (int b = 0; b < B; ++b) {
        const T* xr = &x(b, c, 0);
        for (int t = 0; t < Tn; ++t) {
          sum += xr[t];
          sq += xr[t] * xr[t];
        }
      }
      const T m = sum / static_cast<T>(n);
      mean[static_cast<std::size_t>(c)] = m;
      var[static_cast<std::size_t>(c)] = std::max(T(0), sq / static_cast<T>(n) - m * m);
    }
    if (mode == BnMode::kTrain) {
      for (int c = 0; c < C; ++c) {
        const auto ci = static_cast<std::size_t>(c);
        if (state.stats_valid) {
          state.running_mean[ci] =
              (T(1) - state.momentum) * state.running_mean[ci] + state.momentum * mean[ci];
          state.running_var[ci] =
              (T(1) - state.momentum) * state.running_var[ci] + state.momentum * var[ci];
        } else {
          state.running_mean[ci] = mean[ci];
          state.running_var[ci] = var[ci];
        }
      }
    } else {  // CaptureStats: overwrite, no momentum blending
      state.running_mean = mean;
      state.running_var = var;
    }
    state.stats_valid = true;
  }

  Tensor<T> y({B, C, Tn});
  std::vector<T> inv_std(static_cast<std::size_t>(C));
  for (int c = 0; c < C; ++c) {
    const auto ci = static_cast<std::size_t>(c);
    inv_std[ci] = T(1) / std::sqrt(var[ci] + state.eps);
    const T g = state.gamma(c) * inv_std[ci];
    const T off = state.beta(c) - g * mean[ci];
    for (int b = 0; b < B; ++b) {
      const T* xr = &x(b, c, 0);
      T* yr = &y(b, c, 0);
      for (int t = 0; t < Tn; ++t) yr[t] = g * xr[t] + off;
    }
  }
  if (cache) {
    cache->mean = std::move(mean);
    cache->inv_std = std::move(inv_std);
    cache->mode = mode;
  }
  return y;
}

template <typename T>
struct BatchNormGrads {
  Tensor<T> dx, dgamma, dbeta;
};

template <typename T>
BatchNormGrads<T> batchnorm_backward(const Tensor<T>& gy, const Tensor<T>& x,
                                     const BatchNormState<T>& state,
                                     const BatchNormCache<T>& cache) {
  const int B = x.dim(0), C = x.dim(1), Tn = x.dim(2);
  require_shape(gy, {B, C, Tn}, "batchnorm_backward gy");
  const T n = static_cast<T>(static_cast<std::int64_t>(B) * Tn);

  BatchNormGrads<T> g{Tensor<T>({B, C, Tn}), Tensor<T>({C}), Tensor<T>({C})};
  for (int c = 0; c < C; ++c) {
    const auto ci = static_cast<std::size_t>(c);
    const T mu = cache.mean[ci];
    const T is = cache.inv_std[ci];
    T sum_g = T(0), sum_gx = T(0);
    for (int b = 0; b < B; ++b) {
      const T* gr = &gy(b, c, 0);
      const T* xr = &x(b, c, 0);
      for (int t = 0; t < Tn; ++t) {
        sum_g += gr[t];
        sum_gx += gr[t] * (xr[t] - mu) * is;
      }
    }
    g.dbeta(c) = sum_g;
    g.dgamma(c) = sum_gx;
    const T gamma_is = state.gamma(c) * is;
    if (cache.mode == BnMode::kEval) {
      // running statistics are constants w.r.t. the input
      for (int b = 0; b < B; ++b) {
        const T* gr = &gy(b, c, 0);
        T* dxr = &g.dx(b, c, 0);
        for (int t = 0; t < Tn; ++t) dxr[t] = gamma_is * gr[t];
      }
    } else {
      const T mg = sum_g / n;
      const T mgx = sum_gx / n;
      for (int b = 0; b < B; ++b) {
        const T* gr = &gy(b, c, 0);
        const T* xr = &x(b, c, 0);
        T* dxr = &g.dx(b, c, 0);
        for (int t = 0; t < Tn; ++t) {
          const T xh = (xr[t] - mu) * is;
          dxr[t] = gamma_is * (gr[t] - mg - xh * mgx);
        }
      }
    }
  }
  return g;
}

// ---------------------------------------------------------------------------
// ReLU
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  Tensor<T> y(x.shape);
  for (std::size_t i = 0; i < x.data.size(); ++i) y.data[i] = x.data[i] > T(0) ? x.data[i] : T(0);
  return y;
}

template <typename T>
Tensor<T> relu_backward(const Tensor<T>& gy, const Tensor<T>& x) {
  if (!gy.same_shape(x)) throw std::invalid_argument("relu_backward: shape mismatch");
  Tensor<T> dx(x.shape);
  for (std::size_t i = 0; i < x.data.size(); ++i)
    dx.data[i] = x.data[i] > T(0) ? gy.data[i] : T(0);
  return dx;
}

// ---------------------------------------------------------------------------
// Max pooling, kernel 2 stride 2, trailing odd sample dropped.
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> maxpool1d(const Tensor<T>& x, std::vector<std::uint8_t>* argmax = nullptr) {
  require_ndim(x, 3, "maxpool1d x");
  const int B = x.dim(0), C = x.dim(1), Tn = x.dim(2);
  if (Tn < 2) throw std::invalid_argument("maxpool1d: time length must be >= 2");
  const int To = Tn / 2;
  Tensor<T> y({B, C, To});
  if (argmax) argmax->assign(y.data.size(), 0);
  std::size_t i = 0;
  for (int b = 0; b < B; ++b) {
    for (int c = 0; c < C; ++c) {
      const T* xr = &x(b, c, 0);
      T* yr = &y(b, c, 0);
      for (int t = 0; t < To; ++t, ++i) {
        const T a = xr[2 * t], bb = xr[2 * t + 1];
        if (bb > a) {  // ties go to the first (earlier) sample
          yr[t] = bb;
          if (argmax) (*argmax)[i] = 1;
        } else {
          yr[t] = a;
        }
      }
    }
  }
  return y;
}

template <typename T>
Tensor<T> maxpool1d_backward(const Tensor<T>& gy, const std::vector<int>& x_shape,
                             const std::vector<std::uint8_t>& argmax) {
  require_ndim(gy, 3, "maxpool1d_backward gy");
  if (argmax.size() != gy.data.size())
    throw std::invalid_argument("maxpool1d_backward: argmax size mismatch");
  const int B = x_shape[0], C = x_shape[1], Tn = x_shape[2];
  const int To = Tn / 2;
  if (gy.dim(0) != B || gy.dim(1) != C || gy.dim(2) != To)
    throw std::invalid_argument("maxpool1d_backward: shape mismatch");
  Tensor<T> dx({B, C, Tn});
  std::size_t i = 0;
  for (int b = 0; b < B; ++b)
    for (int c = 0; c < C; ++c) {
      const T* gr = &gy(b, c, 0);
      T* dxr = &dx(b, c, 0);
      for (int t = 0; t < To; ++t, ++i) dxr[2 * t + argmax[i]] = gr[t];
    }
  return dx;
}

// ---------------------------------------------------------------------------
// Global average over the time axis.
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> global_avg_pool_time(const Tensor<T>& x) {
  require_ndim(x, 3, "global_avg_pool_time x");
  const int B = x.dim(0), C = x.dim(1), Tn = x.dim(2);
  if (Tn < 1) throw std::invalid_argument("global_avg_pool_time: empty time axis");
  Tensor<T> y({B, C});
  for (int b = 0; b < B; ++b)
    for (int c = 0; c < C; ++c) {
      const T* xr = &x(b, c, 0);
      T acc = T(0);
      for (int t = 0; t < Tn; ++t) acc += xr[t];
      y(b, c) = acc / static_cast<T>(Tn);
    }
  return y;
}

template <typename T>
Tensor<T> global_avg_pool_time_backward(const Tensor<T>& gy, int time_len) {
  require_ndim(gy, 2, "global_avg_pool_time_backward gy");
  const int B = gy.dim(0), C = gy.dim(1);
  Tensor<T> dx({B, C, time_len});
  const T inv = T(1) / static_cast<T>(time_len);
  for (int b = 0; b < B; ++b)
    for (int c = 0; c < C; ++c) {
      const T v = gy(b, c) * inv;
      T* dxr = &dx(b, c, 0);
      std::fill(dxr, dxr + time_len, v);
    }
  return dx;
}

// ---------------------------------------------------------------------------
// Fully connected head.
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias) {
  require_ndim(x, 2, "linear x");
  require_ndim(w, 2, "linear w");
  const int B = x.dim(0), F = x.dim(1), O = w.dim(0);
  if (w.dim(1) != F)
    throw std::invalid_argument("linear: feature dims disagree, x " + x.shape_str() + " vs w " +
                                w.shape_str());
  if (bias.dim(0) != O) throw std::invalid_argument("linear: bias length != out dim");
  Tensor<T> y({B, O});
  for (int b = 0; b < B; ++b) {
    const T* xr = &x(b, 0);
    for (int o = 0; o < O; ++o) {
      const T* wr = &w(o, 0);
      T acc = bias(o);
      for (int f = 0; f < F; ++f) acc += xr[f] * wr[f];
      y(b, o) = acc;
    }
  }
  return y;
}

template <typename T>
struct LinearGrads {
  Tensor<T> dx, dw, db;
};

template <typename T>
LinearGrads<T> linear_backward(const Tensor<T>& gy, const Tensor<T>& x, const Tensor<T>& w) {
  const int B = x.dim(0), F = x.dim(1), O = w.dim(0);
  require_shape(gy, {B, O}, "linear_backward gy");
  LinearGrads<T> g{Tensor<T>({B, F}), Tensor<T>({O, F}), Tensor<T>({O})};
  for (int b = 0; b < B; ++b) {
    const T* xr = &x(b, 0);
    T* dxr = &g.dx(b, 0);
    for (int o = 0; o < O; ++o) {
      const T gv = gy(b, o);
      const T* wr = &w(o, 0);
      T* dwr = &g.dw(o, 0);
      g.db(o) += gv;
      for (int f = 0; f < F; ++f) {
        dxr[f] += gv * wr[f];
        dwr[f] += gv * xr[f];
      }
    }
  }
  return g;
}

// ---------------------------------------------------------------------------
// Softmax cross-entropy with soft targets (mixup-friendly).
// Returns the batch-mean loss; optionally the gradient w.r.t. logits.
// ---------------------------------------------------------------------------

template <typename T>
T softmax_cross_entropy(const Tensor<T>& logits, const Tensor<T>& targets,
                        Tensor<T>* dlogits = nullptr) {
  require_ndim(logits, 2, "softmax_cross_entropy logits");
  if (!logits.same_shape(targets))
    throw std::invalid_argument("softmax_cross_entropy: logits/targets shape mismatch");
  const int B = logits.dim(0), K = logits.dim(1);
  if (B < 1) throw std::invalid_argument("softmax_cross_entropy: empty batch");
  for (const T v : logits.data)
    if (!std::isfinite(static_cast<double>(v)))
      throw std::domain_error("softmax_cross_entropy: non-finite logit");

  if (dlogits) *dlogits = Tensor<T>({B, K});
  T loss = T(0);
  std::vector<T> p(static_cast<std::size_t>(K));
  for (int b = 0; b < B; ++b) {
    const T* lr = &logits(b, 0);
    const T m = *std::max_element(lr, lr + K);
    T z = T(0);
    for (int k = 0; k < K; ++k) {
      p[static_cast<std::size_t>(k)] = std::exp(lr[k] - m);
      z += p[static_cast<std::size_t>(k)];
    }
    const T logz = std::log(z);
    for (int k = 0; k < K; ++k) {
      const T tk = targets(b, k);
      if (tk != T(0)) loss -= tk * (lr[k] - m - logz);
      if (dlogits)
        (*dlogits)(b, k) = (p[static_cast<std::size_t>(k)] / z - tk) / static_cast<T>(B);
    }
  }
  return loss / static_cast<T>(B);
}

}  // namespace simpleconv
