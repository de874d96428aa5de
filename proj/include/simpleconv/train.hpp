#pragma once

// The training routine: Adam over softmax cross-entropy with an optional
// subject-identity auxiliary loss, mixup augmentation, and a step learning
// rate schedule (one decay by a fixed factor). Fine-tuning continues the
// same optimizer at the post-decay rate with the subject loss off; MDL is
// the identical routine on a merged train pool.

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "simpleconv/adam.hpp"
#include "simpleconv/model.hpp"
#include "simpleconv/ops.hpp"
#include "simpleconv/rng.hpp"
#include "simpleconv/tensor.hpp"

namespace simpleconv {

struct TrainConfig {
  int epochs = 50;
  int decay_epoch = 40;        // first epoch index that runs at the decayed rate
  double decay_factor = 0.1;
  double base_lr = 1e-3;
  int batch_size = 64;
  double mixup_alpha = 0.2;    // 0 disables mixup
  double subject_loss_weight = 0.1;  // lambda_s; 0 disables the auxiliary loss
  std::uint64_t seed = 0;
  int finetune_epochs = 60;

  void validate() const {
    if (epochs < 0 || decay_epoch < 0 || decay_epoch > epochs)
      throw std::invalid_argument("TrainConfig: need 0 <= decay_epoch <= epochs");
    if (decay_factor <= 0.0 || decay_factor > 1.0)
      throw std::invalid_argument("TrainConfig: decay_factor must be in (0, 1]");
    if (base_lr <= 0.0) throw std::invalid_argument("TrainConfig: base_lr must be positive");
    if (batch_size < 1) throw std::invalid_argument("TrainConfig: batch_size must be >= 1");
    if (mixup_alpha < 0.0) throw std::invalid_argument("TrainConfig: mixup_alpha must be >= 0");
    if (subject_loss_weight < 0.0)
      throw std::invalid_argument("TrainConfig: subject_loss_weight must be >= 0");
    if (finetune_epochs < 0)
      throw std::invalid_argument("TrainConfig: finetune_epochs must be >= 0");
  }
};

struct EpochStats {
  double task_loss = 0.0;
  double subject_loss = 0.0;  // unweighted auxiliary CE (0 when disabled)
  double total_loss = 0.0;    // task + lambda_s * subject
  double lr = 0.0;
  double train_accuracy = 0.0;  // vs the mixup-dominant label, percent
  double seconds = 0.0;
};
using TrainHistory = std::vector<EpochStats>;

/// Preprocessed, model-ready training pool. `subjects` holds contiguous ids
/// in [0, n_subjects) or stays empty when the auxiliary head is unused.
template <typename T>
struct TrainSet {
  Tensor<T> x;  // [N, C, T]
  std::vector<int> labels;
  std::vector<int> subjects;
  int n_classes = 0;
  int n_subjects = 0;
};

/// Convex combination of a batch with a random permutation partner; the same
/// lambda ~ Beta(alpha, alpha) mixes inputs, class targets and subject
/// targets. Batches of one trial are returned unchanged with lambda = 1.
template <typename T>
double mixup_batch(Tensor<T>& x, Tensor<T>& y, Tensor<T>* s, double alpha, Rng& rng,
                   std::vector<int>* partner = nullptr) {
  const int B = x.dim(0);
  if (partner) {
    partner->resize(static_cast<std::size_t>(B));
    for (int i = 0; i < B; ++i) (*partner)[static_cast<std::size_t>(i)] = i;
  }
  if (B < 2) return 1.0;
  const double lambda = rng.beta(alpha, alpha);
  std::vector<int> perm(static_cast<std::size_t>(B));
  for (int i = 0; i < B; ++i) perm[static_cast<std::size_t>(i)] = i;
  rng.shuffle(perm);
  if (partner) *partner = perm;

  auto mix = [&](Tensor<T>& t) {
    const std::size_t stride = t.data.size() / static_cast<std::size_t>(B);
    Tensor<T> orig = t;
    for (int i = 0; i < B; ++i) {
      const T* a = orig.data.data() + static_cast<std::size_t>(i) * stride;
      const T* b = orig.data.data() + static_cast<std::size_t>(perm[static_cast<std::size_t>(i)]) * stride;
      T* out = t.data.data() + static_cast<std::size_t>(i) * stride;
      for (std::size_t j = 0; j < stride; ++j)
        out[j] = static_cast<T>(lambda) * a[j] + static_cast<T>(1.0 - lambda) * b[j];
    }
  };
  mix(x);
  mix(y);
  if (s) mix(*s);
  return lambda;
}

namespace detail {

template <typename T>
EpochStats run_one_epoch(Model<T>& model, const TrainSet<T>& data, const TrainConfig& cfg,
                         AdamState<T>& adam, Rng& rng, double lr, bool use_subject_loss) {
  const auto t0 = std::chrono::steady_clock::now();
  const int N = data.x.dim(0), C = data.x.dim(1), L = data.x.dim(2);
  const int K = data.n_classes, P = model.config.n_subjects;

  std::vector<int> order(static_cast<std::size_t>(N));
  for (int i = 0; i < N; ++i) order[static_cast<std::size_t>(i)] = i;
  rng.shuffle(order);

  const std::vector<Tensor<T>*> params = model.parameters();
  adam.lr = static_cast<T>(lr);

  EpochStats stats;
  stats.lr = lr;
  int correct = 0;
  int n_batches = 0;

  for (int base = 0; base < N; base += cfg.batch_size, ++n_batches) {
    const int B = std::min(cfg.batch_size, N - base);
    Tensor<T> xb({B, C, L}), yb({B, K});
    Tensor<T> sb = use_subject_loss ? Tensor<T>({B, P}) : Tensor<T>();
    std::vector<int> batch_labels(static_cast<std::size_t>(B));
    for (int i = 0; i < B; ++i) {
      const int src = order[static_cast<std::size_t>(base + i)];
      std::copy(&data.x(src, 0, 0), &data.x(src, 0, 0) + static_cast<std::size_t>(C) * L,
                &xb(i, 0, 0));
      const int lab = data.labels[static_cast<std::size_t>(src)];
      yb(i, lab) = T(1);
      batch_labels[static_cast<std::size_t>(i)] = lab;
      if (use_subject_loss) sb(i, data.subjects[static_cast<std::size_t>(src)]) = T(1);
    }

    double lambda = 1.0;
    std::vector<int> partner;
    if (cfg.mixup_alpha > 0.0)
      lambda = mixup_batch(xb, yb, use_subject_loss ? &sb : nullptr, cfg.mixup_alpha, rng,
                           &partner);

    ForwardTrace<T> trace;
    auto out = forward(model, xb, BnMode::kTrain, &trace);
    Tensor<T> dclass;
    const double task = softmax_cross_entropy(out.class_logits, yb, &dclass);
    double subj = 0.0;
    Tensor<T> dsubj;
    if (use_subject_loss) {
      subj = softmax_cross_entropy(out.subject_logits, sb, &dsubj);
      const auto w = static_cast<T>(cfg.subject_loss_weight);
      for (T& v : dsubj.data) v *= w;
    }

    model.zero_grads();
    backward(model, trace, dclass, use_subject_loss ? &dsubj : nullptr);
    adam_step(params, adam);

    stats.task_loss += task;
    stats.subject_loss += subj;
    for (int i = 0; i < B; ++i) {
      int arg = 0;
      for (int k = 1; k < K; ++k)
        if (out.class_logits(i, k) > out.class_logits(i, arg)) arg = k;
      const int dominant =
          (lambda >= 0.5 || partner.empty())
              ? batch_labels[static_cast<std::size_t>(i)]
              : batch_labels[static_cast<std::size_t>(partner[static_cast<std::size_t>(i)])];
      correct += arg == dominant;
    }
  }

  stats.task_loss /= n_batches;
  stats.subject_loss /= n_batches;
  stats.total_loss = stats.task_loss + cfg.subject_loss_weight * stats.subject_loss;
  stats.train_accuracy = 100.0 * correct / N;
  stats.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return stats;
}

template <typename T>
void check_train_set(const Model<T>& model, const TrainSet<T>& data, const char* who) {
  if (data.x.ndim() != 3 || data.x.dim(0) < 1)
    throw std::invalid_argument(std::string(who) + ": empty train set");
  if (data.labels.size() != static_cast<std::size_t>(data.x.dim(0)))
    throw std::invalid_argument(std::string(who) + ": one label per trial required");
  if (data.n_classes != model.config.n_classes)
    throw std::invalid_argument(std::string(who) + ": class count disagrees with the model");
  for (const int l : data.labels)
    if (l < 0 || l >= data.n_classes)
      throw std::invalid_argument(std::string(who) + ": label out of range");
  if (!data.subjects.empty()) {
    if (data.subjects.size() != data.labels.size())
      throw std::invalid_argument(std::string(who) + ": one subject id per trial required");
    for (const int s : data.subjects)
      if (s < 0 || s >= data.n_subjects)
        throw std::invalid_argument(std::string(who) +
                                    ": subject ids must be contiguous in [0, n_subjects)");
  }
}

}  // namespace detail

/// One training run. The learning rate is base_lr before decay_epoch and
/// base_lr * decay_factor from decay_epoch on (exactly one step change).
/// Single-threaded and bitwise deterministic for a fixed seed. When
/// `adam_io` is given, the optimizer state persists there for fine-tuning.
template <typename T>
TrainHistory train(Model<T>& model, const TrainSet<T>& data, const TrainConfig& cfg,
                   AdamState<T>* adam_io = nullptr) {
  cfg.validate();
  detail::check_train_set(model, data, "train");
  const bool use_subject = cfg.subject_loss_weight > 0.0 && model.has_subject_head() &&
                           !data.subjects.empty();
  if (use_subject && data.n_subjects > model.config.n_subjects)
    throw std::invalid_argument("train: subject head is narrower than the train-set subject count");

  AdamState<T> local;
  AdamState<T>& adam = adam_io ? *adam_io : local;
  Rng rng(derive_seed(cfg.seed, 0x7261u));

  TrainHistory history;
  history.reserve(static_cast<std::size_t>(cfg.epochs));
  for (int e = 0; e < cfg.epochs; ++e) {
    const double lr = e < cfg.decay_epoch ? cfg.base_lr : cfg.base_lr * cfg.decay_factor;
    history.push_back(detail::run_one_epoch(model, data, cfg, adam, rng, lr, use_subject));
  }
  return history;
}

/// Continue training on one subject's calibration data at the post-decay
/// learning rate, subject head disabled. The Adam state from train() carries
/// over so moments persist across the phase boundary.
template <typename T>
TrainHistory finetune(Model<T>& model, AdamState<T>& adam, const TrainSet<T>& calibration,
                      const TrainConfig& cfg) {
  cfg.validate();
  detail::check_train_set(model, calibration, "finetune");
  if (!calibration.subjects.empty())
    for (const int s : calibration.subjects)
      if (s != calibration.subjects.front())
        throw std::invalid_argument("finetune: calibration must come from one subject");

  Rng rng(derive_seed(cfg.seed, 0xf17eu));
  const double lr = cfg.base_lr * cfg.decay_factor;
  TrainHistory history;
  history.reserve(static_cast<std::size_t>(cfg.finetune_epochs));
  for (int e = 0; e < cfg.finetune_epochs; ++e)
    history.push_back(detail::run_one_epoch(model, calibration, cfg, adam, rng, lr,
                                            /*use_subject_loss=*/false));
  return history;
}

/// Multi-domain learning: the identical routine run once on the merged
/// cross-subject + calibration pool (callers build the union).
template <typename T>
TrainHistory train_mdl(Model<T>& model, const TrainSet<T>& merged, const TrainConfig& cfg,
                       AdamState<T>* adam_io = nullptr) {
  return train(model, merged, cfg, adam_io);
}

}  // namespace simpleconv
