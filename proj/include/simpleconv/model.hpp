#pragma once

// The convolutional decoder itself: an embedding convolution followed by K
// blocks of [conv, BN, ReLU, conv, BN, ReLU, maxpool], global averaging over
// time and one linear head per task (class, and optionally training-subject
// identity). Feature map counts grow by sqrt(2) per block to compensate the
// halved time resolution.

#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "simpleconv/ops.hpp"
#include "simpleconv/rng.hpp"
#include "simpleconv/serial.hpp"
#include "simpleconv/tensor.hpp"

namespace simpleconv {

struct ModelConfig {
  int width_W = 104;      // feature maps out of the embedding conv
  int depth_K = 4;        // number of two-conv blocks; total layers = 2K+2
  int kernel_S = 6;
  int in_channels = 22;
  int n_classes = 4;
  int n_subjects = 0;     // 0 disables the subject head
  float resample_hz = 70.0f;

  void validate() const {
    if (width_W < 1) throw std::invalid_argument("ModelConfig: width_W must be >= 1");
    if (depth_K < 0) throw std::invalid_argument("ModelConfig: depth_K must be >= 0");
    if (kernel_S < 1) throw std::invalid_argument("ModelConfig: kernel_S must be >= 1");
    if (in_channels < 1) throw std::invalid_argument("ModelConfig: in_channels must be >= 1");
    if (n_classes < 2) throw std::invalid_argument("ModelConfig: n_classes must be >= 2");
    if (n_subjects < 0) throw std::invalid_argument("ModelConfig: n_subjects must be >= 0");
  }
};

/// Defaults tuned for the two evaluation regimes; width and kernel sizes sit
/// inside the recommended search ranges for each.
inline ModelConfig preset_within(int in_channels, int n_classes, int n_subjects = 0) {
  return ModelConfig{104, 1, 15, in_channels, n_classes, n_subjects, 80.0f};
}
inline ModelConfig preset_cross(int in_channels, int n_classes, int n_subjects = 0) {
  return ModelConfig{104, 4, 6, in_channels, n_classes, n_subjects, 70.0f};
}

/// F_i = round(W * 2^{i/2}) for i = 0..K, rounded half away from zero.
inline std::vector<int> channel_schedule(int width_W, int depth_K) {
  std::vector<int> f(static_cast<std::size_t>(depth_K) + 1);
  for (int i = 0; i <= depth_K; ++i)
    f[static_cast<std::size_t>(i)] =
        static_cast<int>(std::llround(width_W * std::pow(2.0, i / 2.0)));
  return f;
}

template <typename T>
struct Conv1dLayer {
  Tensor<T> w, b;  // w: [out, in, S]
};

template <typename T>
struct LinearLayer {
  Tensor<T> w, b;  // w: [out, in]
};

template <typename T>
struct Model {
  ModelConfig config;
  Conv1dLayer<T> embed;
  BatchNormState<T> embed_bn;
  struct Block {
    Conv1dLayer<T> conv1;
    BatchNormState<T> bn1;
    Conv1dLayer<T> conv2;
    BatchNormState<T> bn2;
  };
  std::vector<Block> blocks;
  LinearLayer<T> class_head;
  LinearLayer<T> subject_head;  // unused when n_subjects == 0

  bool has_subject_head() const { return config.n_subjects > 0; }
  int feature_dim() const { return class_head.w.dim(1); }
  int min_time_len() const { return 1 << config.depth_K; }
  /// Convolutions plus the class head; 2K+2 by construction.
  int layer_count() const { return 2 * config.depth_K + 2; }

  std::vector<Tensor<T>*> parameters() {
    std::vector<Tensor<T>*> p{&embed.w, &embed.b, &embed_bn.gamma, &embed_bn.beta};
    for (auto& blk : blocks) {
      p.push_back(&blk.conv1.w);
      p.push_back(&blk.conv1.b);
      p.push_back(&blk.bn1.gamma);
      p.push_back(&blk.bn1.beta);
      p.push_back(&blk.conv2.w);
      p.push_back(&blk.conv2.b);
      p.push_back(&blk.bn2.gamma);
      p.push_back(&blk.bn2.beta);
    }
    p.push_back(&class_head.w);
    p.push_back(&class_head.b);
    if (has_subject_head()) {
      p.push_back(&subject_head.w);
      p.push_back(&subject_head.b);
    }
    return p;
  }

  std::vector<const Tensor<T>*> parameters() const {
    auto ps = const_cast<Model*>(this)->parameters();
    return {ps.begin(), ps.end()};
  }

  std::vector<BatchNormState<T>*> bn_states() {
    std::vector<BatchNormState<T>*> s{&embed_bn};
    for (auto& blk : blocks) {
      s.push_back(&blk.bn1);
      s.push_back(&blk.bn2);
    }
    return s;
  }

  void ensure_grads() {
    for (Tensor<T>* p : parameters()) p->ensure_grad();
  }
  void zero_grads() {
    for (Tensor<T>* p : parameters()) p->zero_grad();
  }
};

/// Count of learnable scalars; BN running statistics excluded.
template <typename T>
std::int64_t count_params(const Model<T>& model) {
  std::int64_t n = 0;
  for (const Tensor<T>* p : model.parameters()) n += p->size();
  return n;
}

namespace detail {

template <typename T>
Conv1dLayer<T> make_conv(int out_c, int in_c, int kernel, Rng& rng) {
  Conv1dLayer<T> layer{Tensor<T>({out_c, in_c, kernel}, true), Tensor<T>({out_c}, true)};
  const double bound = std::sqrt(6.0 / (static_cast<double>(in_c) * kernel));
  for (T& v : layer.w.data) v = static_cast<T>(rng.uniform(-bound, bound));
  return layer;
}

template <typename T>
LinearLayer<T> make_linear(int out_c, int in_c, Rng& rng) {
  LinearLayer<T> layer{Tensor<T>({out_c, in_c}, true), Tensor<T>({out_c}, true)};
  const double bound = std::sqrt(6.0 / static_cast<double>(in_c));
  for (T& v : layer.w.data) v = static_cast<T>(rng.uniform(-bound, bound));
  return layer;
}

}  // namespace detail

/// He-uniform weights, zero biases, BN gamma=1 beta=0. Deterministic per seed.
template <typename T>
Model<T> build_model(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  Rng rng(derive_seed(seed, 0x1715u));
  const auto f = channel_schedule(config.width_W, config.depth_K);

  Model<T> m;
  m.config = config;
  m.embed = detail::make_conv<T>(f[0], config.in_channels, config.kernel_S, rng);
  m.embed_bn = BatchNormState<T>(f[0]);
  for (int i = 1; i <= config.depth_K; ++i) {
    typename Model<T>::Block blk;
    blk.conv1 = detail::make_conv<T>(f[i], f[i - 1], config.kernel_S, rng);
    blk.bn1 = BatchNormState<T>(f[i]);
    blk.conv2 = detail::make_conv<T>(f[i], f[i], config.kernel_S, rng);
    blk.bn2 = BatchNormState<T>(f[i]);
    m.blocks.push_back(std::move(blk));
  }
  m.class_head = detail::make_linear<T>(config.n_classes, f.back(), rng);
  if (config.n_subjects > 0)
    m.subject_head = detail::make_linear<T>(config.n_subjects, f.back(), rng);
  m.ensure_grads();
  return m;
}

template <typename T>
struct ForwardTrace {
  // One entry per convolution, embedding conv first.
  std::vector<Tensor<T>> conv_in;
  std::vector<Tensor<T>> bn_in;
  std::vector<BatchNormCache<T>> bn_cache;
  std::vector<Tensor<T>> relu_in;
  // One entry per block.
  std::vector<std::vector<std::uint8_t>> pool_argmax;
  std::vector<std::vector<int>> pool_in_shape;
  Tensor<T> features;
  int gap_time_len = 0;
};

template <typename T>
struct ForwardResult {
  Tensor<T> class_logits;
  Tensor<T> subject_logits;  // empty when the subject head is disabled
  Tensor<T> features;        // post-average pre-head activations [B, F_K]
};

template <typename T>
ForwardResult<T> forward(Model<T>& model, const Tensor<T>& x, BnMode mode,
                         ForwardTrace<T>* trace = nullptr);

/// Eval-mode forward on a const model. Only kEval is allowed here: Train and
/// CaptureStats update batch-norm running statistics and need the mutable
/// overload.
template <typename T>
ForwardResult<T> forward(const Model<T>& model, const Tensor<T>& x, BnMode mode) {
  if (mode != BnMode::kEval)
    throw std::logic_error("forward(const Model&): only Eval mode leaves the model unchanged");
  return forward(const_cast<Model<T>&>(model), x, mode, static_cast<ForwardTrace<T>*>(nullptr));
}

template <typename T>
ForwardResult<T> forward(Model<T>& model, const Tensor<T>& x, BnMode mode,
                         ForwardTrace<T>* trace) {
  require_ndim(x, 3, "model forward x");
  if (x.dim(1) != model.config.in_channels)
    throw std::invalid_argument("model forward: expected " +
                                std::to_string(model.config.in_channels) + " channels, got " +
                                std::to_string(x.dim(1)));
  if (x.dim(2) < model.min_time_len())
    throw std::invalid_argument("model forward: input length " + std::to_string(x.dim(2)) +
                                " below minimum " + std::to_string(model.min_time_len()) +
                                " required by " + std::to_string(model.config.depth_K) +
                                " pooling stages");

  auto conv_bn_relu = [&](const Tensor<T>& in, Conv1dLayer<T>& conv, BatchNormState<T>& bn) {
    if (trace) trace->conv_in.push_back(in);
    Tensor<T> z = conv1d(in, conv.w, conv.b);
    BatchNormCache<T> cache;
    Tensor<T> n = batchnorm(z, bn, mode, trace ? &cache : nullptr);
    if (trace) {
      trace->bn_in.push_back(std::move(z));
      trace->bn_cache.push_back(std::move(cache));
      trace->relu_in.push_back(n);
    }
    return relu(n);
  };

  Tensor<T> h = conv_bn_relu(x, model.embed, model.embed_bn);
  for (auto& blk : model.blocks) {
    h = conv_bn_relu(h, blk.conv1, blk.bn1);
    h = conv_bn_relu(h, blk.conv2, blk.bn2);
    std::vector<std::uint8_t> argmax;
    Tensor<T> pooled = maxpool1d(h, trace ? &argmax : nullptr);
    if (trace) {
      trace->pool_argmax.push_back(std::move(argmax));
      trace->pool_in_shape.push_back(h.shape);
    }
    h = std::move(pooled);
  }

  ForwardResult<T> out;
  out.features = global_avg_pool_time(h);
  if (trace) {
    trace->gap_time_len = h.dim(2);
    trace->features = out.features;
  }
  out.class_logits = linear(out.features, model.class_head.w, model.class_head.b);
  if (model.has_subject_head())
    out.subject_logits = linear(out.features, model.subject_head.w, model.subject_head.b);
  return out;
}

/// Accumulates parameter gradients for one traced forward pass. dsubject may
/// be null when the subject head is unused or its loss is disabled.
template <typename T>
void backward(Model<T>& model, const ForwardTrace<T>& trace, const Tensor<T>& dclass,
              const Tensor<T>* dsubject = nullptr) {
  auto add_inplace = [](Tensor<T>& dst, const Tensor<T>& src) {
    for (std::size_t i = 0; i < dst.data.size(); ++i) dst.data[i] += src.data[i];
  };
  auto accum_grad = [&add_inplace](Tensor<T>& param, const Tensor<T>& g) {
    for (std::size_t i = 0; i < param.grad.size(); ++i) param.grad[i] += g.data[i];
  };

  LinearGrads<T> hg = linear_backward(dclass, trace.features, model.class_head.w);
  accum_grad(model.class_head.w, hg.dw);
  accum_grad(model.class_head.b, hg.db);
  Tensor<T> dfeat = std::move(hg.dx);
  if (dsubject) {
    if (!model.has_subject_head())
      throw std::logic_error("backward: subject gradient given but head disabled");
    LinearGrads<T> sg = linear_backward(*dsubject, trace.features, model.subject_head.w);
    accum_grad(model.subject_head.w, sg.dw);
    accum_grad(model.subject_head.b, sg.db);
    add_inplace(dfeat, sg.dx);
  }

  Tensor<T> dh = global_avg_pool_time_backward(dfeat, trace.gap_time_len);

  auto conv_bn_relu_backward = [&](int li, Tensor<T>& grad, Conv1dLayer<T>& conv,
                                   BatchNormState<T>& bn) {
    Tensor<T> dn = relu_backward(grad, trace.relu_in[static_cast<std::size_t>(li)]);
    BatchNormGrads<T> bg = batchnorm_backward(dn, trace.bn_in[static_cast<std::size_t>(li)], bn,
                                              trace.bn_cache[static_cast<std::size_t>(li)]);
    accum_grad(bn.gamma, bg.dgamma);
    accum_grad(bn.beta, bg.dbeta);
    Conv1dGrads<T> cg =
        conv1d_backward(bg.dx, trace.conv_in[static_cast<std::size_t>(li)], conv.w);
    accum_grad(conv.w, cg.dw);
    accum_grad(conv.b, cg.db);
    return std::move(cg.dx);
  };

  const int K = model.config.depth_K;
  for (int i = K - 1; i >= 0; --i) {
    auto& blk = model.blocks[static_cast<std::size_t>(i)];
    dh = maxpool1d_backward(dh, trace.pool_in_shape[static_cast<std::size_t>(i)],
                            trace.pool_argmax[static_cast<std::size_t>(i)]);
    dh = conv_bn_relu_backward(2 + 2 * i, dh, blk.conv2, blk.bn2);
    dh = conv_bn_relu_backward(1 + 2 * i, dh, blk.conv1, blk.bn1);
  }
  dh = conv_bn_relu_backward(0, dh, model.embed, model.embed_bn);
  // dh is now the gradient w.r.t. the network input; nothing upstream wants it.
}

/// One capture pass over `batch`: every BN layer's running statistics are
/// replaced by the statistics of its own input activations under the already
/// updated upstream layers. Returns an adapted copy; learnable parameters are
/// untouched.
template <typename T>
Model<T> recompute_bn_stats(const Model<T>& model, const Tensor<T>& batch) {
  if (batch.dim(0) < 2)
    throw std::invalid_argument("recompute_bn_stats: need a batch of >= 2 trials");
  Model<T> adapted = model;
  forward(adapted, batch, BnMode::kCaptureStats);
  return adapted;
}

/// Eval-mode features for a stack of trials, chunked to bound memory.
template <typename T>
Tensor<T> extract_embeddings(Model<T>& model, const Tensor<T>& x, int chunk = 256) {
  require_ndim(x, 3, "extract_embeddings x");
  const int N = x.dim(0), C = x.dim(1), Tn = x.dim(2);
  Tensor<T> out({N, model.feature_dim()});
  for (int base = 0; base < N; base += chunk) {
    const int n = std::min(chunk, N - base);
    Tensor<T> slice({n, C, Tn});
    std::copy(&x.data[static_cast<std::size_t>(base) * C * Tn],
              &x.data[static_cast<std::size_t>(base + n) * C * Tn], slice.data.begin());
    ForwardResult<T> r = forward(model, slice, BnMode::kEval);
    std::copy(r.features.data.begin(), r.features.data.end(),
              out.data.begin() + static_cast<std::size_t>(base) * model.feature_dim());
  }
  return out;
}

// ---------------------------------------------------------------------------
// Checkpoint format "ESCM": magic, u32 version, config, then parameters and
// BN running statistics as little-endian float32 in build order.
// ---------------------------------------------------------------------------

namespace detail {

template <typename T>
void put_tensor_f32(std::ostream& os, const Tensor<T>& t) {
  if constexpr (std::is_same_v<T, float>) {
    serial::put_f32_array(os, t.data.data(), t.data.size());
  } else {
    for (const T v : t.data) serial::put_f32(os, static_cast<float>(v));
  }
}

template <typename T>
void get_tensor_f32(std::istream& is, Tensor<T>& t, const char* what) {
  if constexpr (std::is_same_v<T, float>) {
    serial::get_f32_array(is, t.data.data(), t.data.size(), what);
  } else {
    for (T& v : t.data) v = static_cast<T>(serial::get_f32(is, what));
  }
}

template <typename T>
void put_bn(std::ostream& os, const BatchNormState<T>& bn) {
  put_tensor_f32(os, bn.gamma);
  put_tensor_f32(os, bn.beta);
  for (const T v : bn.running_mean) serial::put_f32(os, static_cast<float>(v));
  for (const T v : bn.running_var) serial::put_f32(os, static_cast<float>(v));
  serial::put_f32(os, static_cast<float>(bn.momentum));
  serial::put_f32(os, static_cast<float>(bn.eps));
  serial::put_u8(os, bn.stats_valid ? 1 : 0);
}

template <typename T>
void get_bn(std::istream& is, BatchNormState<T>& bn) {
  get_tensor_f32(is, bn.gamma, "bn gamma");
  get_tensor_f32(is, bn.beta, "bn beta");
  for (T& v : bn.running_mean) v = static_cast<T>(serial::get_f32(is, "bn running mean"));
  for (T& v : bn.running_var) v = static_cast<T>(serial::get_f32(is, "bn running var"));
  bn.momentum = static_cast<T>(serial::get_f32(is, "bn momentum"));
  bn.eps = static_cast<T>(serial::get_f32(is, "bn eps"));
  bn.stats_valid = serial::get_u8(is, "bn flag") != 0;
}

}  // namespace detail

inline constexpr char kCheckpointMagic[4] = {'E', 'S', 'C', 'M'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

template <typename T>
void save_model(const Model<T>& model, std::ostream& os) {
  serial::put_bytes(os, kCheckpointMagic, 4);
  serial::put_u32(os, kCheckpointVersion);
  const ModelConfig& c = model.config;
  serial::put_i32(os, c.width_W);
  serial::put_i32(os, c.depth_K);
  serial::put_i32(os, c.kernel_S);
  serial::put_i32(os, c.in_channels);
  serial::put_i32(os, c.n_classes);
  serial::put_i32(os, c.n_subjects);
  serial::put_f32(os, c.resample_hz);

  detail::put_tensor_f32(os, model.embed.w);
  detail::put_tensor_f32(os, model.embed.b);
  detail::put_bn(os, model.embed_bn);
  for (const auto& blk : model.blocks) {
    detail::put_tensor_f32(os, blk.conv1.w);
    detail::put_tensor_f32(os, blk.conv1.b);
    detail::put_bn(os, blk.bn1);
    detail::put_tensor_f32(os, blk.conv2.w);
    detail::put_tensor_f32(os, blk.conv2.b);
    detail::put_bn(os, blk.bn2);
  }
  detail::put_tensor_f32(os, model.class_head.w);
  detail::put_tensor_f32(os, model.class_head.b);
  if (model.has_subject_head()) {
    detail::put_tensor_f32(os, model.subject_head.w);
    detail::put_tensor_f32(os, model.subject_head.b);
  }
}

template <typename T>
void save_model(const Model<T>& model, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open checkpoint for writing: " + path);
  save_model(model, os);
}

template <typename T>
Model<T> load_model(std::istream& is) {
  char magic[4];
  serial::get_bytes(is, magic, 4, "checkpoint magic");
  if (std::memcmp(magic, kCheckpointMagic, 4) != 0)
    throw std::runtime_error("bad checkpoint magic (expected ESCM)");
  const std::uint32_t version = serial::get_u32(is, "checkpoint version");
  if (version != kCheckpointVersion)
    throw std::runtime_error("unsupported checkpoint version " + std::to_string(version));

  ModelConfig c;
  c.width_W = serial::get_i32(is, "config W");
  c.depth_K = serial::get_i32(is, "config K");
  c.kernel_S = serial::get_i32(is, "config S");
  c.in_channels = serial::get_i32(is, "config channels");
  c.n_classes = serial::get_i32(is, "config classes");
  c.n_subjects = serial::get_i32(is, "config subjects");
  c.resample_hz = serial::get_f32(is, "config resample");
  c.validate();

  Model<T> m = build_model<T>(c, 0);
  detail::get_tensor_f32(is, m.embed.w, "embed w");
  detail::get_tensor_f32(is, m.embed.b, "embed b");
  detail::get_bn(is, m.embed_bn);
  for (auto& blk : m.blocks) {
    detail::get_tensor_f32(is, blk.conv1.w, "conv1 w");
    detail::get_tensor_f32(is, blk.conv1.b, "conv1 b");
    detail::get_bn(is, blk.bn1);
    detail::get_tensor_f32(is, blk.conv2.w, "conv2 w");
    detail::get_tensor_f32(is, blk.conv2.b, "conv2 b");
    detail::get_bn(is, blk.bn2);
  }
  detail::get_tensor_f32(is, m.class_head.w, "class head w");
  detail::get_tensor_f32(is, m.class_head.b, "class head b");
  if (m.has_subject_head()) {
    detail::get_tensor_f32(is, m.subject_head.w, "subject head w");
    detail::get_tensor_f32(is, m.subject_head.b, "subject head b");
  }
  return m;
}

template <typename T>
Model<T> load_model(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open checkpoint: " + path);
  return load_model<T>(is);
}

}  // namespace simpleconv
