#pragma once

// Deterministic synthetic motor-imagery-like EEG. Each class drives a
// sinusoid at f_c = 8 + 4c Hz into a class-specific channel triple; the
// source image is mixed through a subject-specific random orthogonal matrix,
// scaled by a session-specific gain, and buried in 1/f-shaped noise at about
// 0 dB SNR. Identical seeds produce identical bytes, which makes archives
// reproducible test fixtures.

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

#include "simpleconv/archive.hpp"
#include "simpleconv/rng.hpp"

namespace simpleconv {

struct SynthConfig {
  int n_subjects = 4;
  int n_sessions = 2;
  int trials_per_session = 40;
  int n_channels = 8;  // EEG channels
  int n_eog = 0;       // extra EOG channels appended after the EEG block
  double fs = 70.0;
  double duration_s = 4.0;
  int n_classes = 4;
  double noise_scale = 1.0;  // 1 => SNR ~ 0 dB, 0 => noiseless
  std::uint64_t seed = 0;
};

namespace detail {

/// Economy pink-noise shaper (three leaky integrators over white input).
class PinkNoise {
 public:
  explicit PinkNoise(Rng& rng) : rng_(rng) {}
  double next() {
    const double white = rng_.normal();
    b0_ = 0.99765 * b0_ + white * 0.0990460;
    b1_ = 0.96300 * b1_ + white * 0.2965164;
    b2_ = 0.57000 * b2_ + white * 1.0526913;
    return b0_ + b1_ + b2_ + white * 0.1848;
  }

 private:
  Rng& rng_;
  double b0_ = 0.0, b1_ = 0.0, b2_ = 0.0;
};

/// Random orthogonal matrix: Q factor of I + 0.5 G, G standard normal.
/// The identity offset keeps the mixing diagonally dominant on average, so
/// class-triple structure survives in expectation while subjects differ.
inline Eigen::MatrixXd random_orthogonal(int n, Rng& rng) {
  Eigen::MatrixXd g(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) g(i, j) = 0.5 * rng.normal();
  g += Eigen::MatrixXd::Identity(n, n);
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
  Eigen::MatrixXd q = qr.householderQ();
  // Fix the sign convention so the decomposition is unique.
  const Eigen::MatrixXd r = qr.matrixQR().triangularView<Eigen::Upper>();
  for (int j = 0; j < n; ++j)
    if (r(j, j) < 0.0) q.col(j) = -q.col(j);
  return q;
}

}  // namespace detail

inline TrialArchive synth_generate(const SynthConfig& cfg) {
  if (cfg.n_subjects < 1 || cfg.n_sessions < 1 || cfg.trials_per_session < 1 ||
      cfg.n_channels < 1 || cfg.n_classes < 1 || cfg.fs <= 0.0 || cfg.duration_s <= 0.0 ||
      cfg.n_eog < 0)
    throw std::invalid_argument("synth_generate: all dimensions must be positive");
  const double f_max = 8.0 + 4.0 * (cfg.n_classes - 1);
  if (cfg.fs < 2.0 * f_max)
    throw std::invalid_argument("synth_generate: fs " + std::to_string(cfg.fs) +
                                " below Nyquist for the " + std::to_string(f_max) +
                                " Hz class tone (need fs >= " + std::to_string(2.0 * f_max) +
                                ")");

  const int C = cfg.n_channels;
  const int C_all = C + cfg.n_eog;
  const int T = static_cast<int>(std::llround(cfg.duration_s * cfg.fs));
  const double pi = std::numbers::pi;

  TrialArchive a;
  a.n_channels = C_all;
  a.n_samples = T;
  a.fs = static_cast<float>(cfg.fs);
  static const char* kMiNames[4] = {"left_hand", "right_hand", "feet", "tongue"};
  for (int c = 0; c < cfg.n_classes; ++c)
    a.class_names.push_back(c < 4 ? kMiNames[c] : "class" + std::to_string(c));
  a.channel_kinds.assign(static_cast<std::size_t>(C_all), ChannelKind::kEeg);
  for (int c = C; c < C_all; ++c) a.channel_kinds[static_cast<std::size_t>(c)] = ChannelKind::kEog;

  const int n_trials = cfg.n_subjects * cfg.n_sessions * cfg.trials_per_session;
  a.data.resize(static_cast<std::size_t>(n_trials) * C_all * T);
  a.labels.reserve(static_cast<std::size_t>(n_trials));

  const double weights[3] = {1.0, 0.8, 0.6};
  int trial_index = 0;
  for (int subj = 0; subj < cfg.n_subjects; ++subj) {
    Rng subj_rng(derive_seed(cfg.seed, 0x5157u, subj));
    const Eigen::MatrixXd mixing = detail::random_orthogonal(C, subj_rng);
    for (int sess = 0; sess < cfg.n_sessions; ++sess) {
      Rng sess_rng(derive_seed(cfg.seed, 0x5e55u, subj, sess));
      const double gain = 0.75 + 0.5 * sess_rng.uniform();
      for (int k = 0; k < cfg.trials_per_session; ++k, ++trial_index) {
        const int label = k % cfg.n_classes;
        Rng trial_rng(derive_seed(cfg.seed, 0x7121u, subj, sess, k));
        const double f_c = 8.0 + 4.0 * label;
        const double phase = trial_rng.uniform(0.0, 2.0 * pi);

        // Source image: the class tone on its channel triple.
        Eigen::MatrixXd src = Eigen::MatrixXd::Zero(C, T);
        Eigen::VectorXd tone(T);
        for (int t = 0; t < T; ++t) tone(t) = std::sin(2.0 * pi * f_c * t / cfg.fs + phase);
        for (int j = 0; j < 3; ++j) src.row((3 * label + j) % C) += weights[j] * tone.transpose();

        Eigen::MatrixXd signal = gain * (mixing * src);

        // Pink noise normalised to the signal's Frobenius norm (0 dB).
        Eigen::MatrixXd noise = Eigen::MatrixXd::Zero(C_all, T);
        if (cfg.noise_scale > 0.0) {
          for (int c = 0; c < C_all; ++c) {
            detail::PinkNoise pink(trial_rng);
            for (int t = 0; t < T; ++t) noise(c, t) = pink.next();
          }
          const double nf = noise.norm();
          if (nf > 0.0) noise *= cfg.noise_scale * signal.norm() / nf;
        }

        Eigen::MatrixXd trial(C_all, T);
        trial.topRows(C) = signal;
        if (cfg.n_eog > 0) {
          // EOG rows leak a weak copy of the mean source tone.
          Eigen::RowVectorXd leak = 0.2 * gain * tone.transpose();
          for (int c = C; c < C_all; ++c) trial.row(c) = leak;
        }
        trial += noise;

        a.labels.push_back(static_cast<std::uint16_t>(label));
        a.subject_ids.push_back(static_cast<std::uint16_t>(subj));
        a.session_ids.push_back(static_cast<std::uint16_t>(sess));
        a.set_trial(trial_index, trial);
      }
    }
  }

  a.manifest = {{"generator", "synth"},
                {"seed", std::to_string(cfg.seed)},
                {"subjects", std::to_string(cfg.n_subjects)},
                {"sessions", std::to_string(cfg.n_sessions)},
                {"trials_per_session", std::to_string(cfg.trials_per_session)},
                {"channels", std::to_string(cfg.n_channels)},
                {"eog", std::to_string(cfg.n_eog)},
                {"fs", std::to_string(cfg.fs)},
                {"duration_s", std::to_string(cfg.duration_s)},
                {"classes", std::to_string(cfg.n_classes)},
                {"noise_scale", std::to_string(cfg.noise_scale)}};
  a.validate();
  return a;
}

}  // namespace simpleconv
