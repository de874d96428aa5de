#pragma once

// Single-trial inference latency measurement: trials pass through the model
// one at a time (batch size 1, Eval mode, single thread), warmup passes are
// discarded, and only the forward call sits inside the timed region. The
// optional hooks bracket that region so tests can verify the claim.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>
#include <sys/utsname.h>

#include "simpleconv/model.hpp"
#include "simpleconv/tensor.hpp"

namespace simpleconv {

struct LatencyReport {
  std::string model_tag;
  int n_passes = 0;        // timed passes; warmup excluded
  int warmup_passes = 0;
  double mean_s = 0.0;
  double median_s = 0.0;
  double p95_s = 0.0;
  std::int64_t param_count = 0;
  std::string hardware;
  bool noise_flag = false;    // consecutive measurements drifted >= 20%
  double noise_drift = 0.0;   // relative drift vs the previous measurement
};

struct BenchHooks {
  std::function<void(int pass)> before_forward;  // fires just before the timer starts
  std::function<void(int pass)> after_forward;   // fires just after the timer stops
};

inline std::string hardware_descriptor() {
  std::string cpu = "unknown cpu";
  std::ifstream info("/proc/cpuinfo");
  std::string line;
  while (std::getline(info, line)) {
    const auto pos = line.find("model name");
    if (pos != std::string::npos) {
      const auto colon = line.find(':');
      if (colon != std::string::npos && colon + 2 <= line.size()) cpu = line.substr(colon + 2);
      break;
    }
  }
  utsname u{};
  std::string os = "unknown os";
  if (uname(&u) == 0) os = std::string(u.sysname) + " " + u.machine;
  return cpu + "; " + os + "; " + std::to_string(std::thread::hardware_concurrency()) +
         " hardware thread(s)";
}

/// Time `repeats` passes over every trial, one trial per forward call. The
/// per-trial batches are sliced before any timing starts, so the measured
/// interval covers the forward pass alone.
template <typename T>
LatencyReport measure_latency(const Model<T>& model, const Tensor<T>& trials, int repeats = 10,
                              int warmup = 50, const std::string& tag = "model",
                              const BenchHooks* hooks = nullptr) {
  require_ndim(trials, 3, "measure_latency trials");
  const int N = trials.dim(0), C = trials.dim(1), L = trials.dim(2);
  if (N < 1) throw std::invalid_argument("measure_latency: zero trials");
  if (repeats < 1) throw std::invalid_argument("measure_latency: repeats must be >= 1");
  if (warmup < 1) throw std::invalid_argument("measure_latency: warmup must be >= 1 pass");

  std::vector<Tensor<T>> singles;
  singles.reserve(static_cast<std::size_t>(N));
  for (int i = 0; i < N; ++i) {
    Tensor<T> one({1, C, L});
    std::copy(&trials(i, 0, 0), &trials(i, 0, 0) + static_cast<std::size_t>(C) * L,
              one.data.data());
    singles.push_back(std::move(one));
  }

  // Timing is independent of the weights, so measure on a copy; untrained
  // models get their batch-norm statistics seeded with one untimed pass.
  Model<T> local = model;
  bool stats_ready = true;
  for (const BatchNormState<T>* bn : local.bn_states()) stats_ready = stats_ready && bn->stats_valid;
  if (!stats_ready) forward(local, singles.front(), BnMode::kCaptureStats);

  for (int i = 0; i < warmup; ++i)
    forward(local, singles[static_cast<std::size_t>(i % N)], BnMode::kEval);

  std::vector<double> times;
  times.reserve(static_cast<std::size_t>(repeats) * N);
  int pass = 0;
  for (int r = 0; r < repeats; ++r)
    for (int i = 0; i < N; ++i, ++pass) {
      if (hooks && hooks->before_forward) hooks->before_forward(pass);
      const auto t0 = std::chrono::steady_clock::now();
      forward(local, singles[static_cast<std::size_t>(i)], BnMode::kEval);
      const auto t1 = std::chrono::steady_clock::now();
      if (hooks && hooks->after_forward) hooks->after_forward(pass);
      times.push_back(std::chrono::duration<double>(t1 - t0).count());
    }

  LatencyReport rep;
  rep.model_tag = tag;
  rep.n_passes = static_cast<int>(times.size());
  rep.warmup_passes = warmup;
  rep.param_count = count_params(local);
  rep.hardware = hardware_descriptor();

  double sum = 0.0;
  for (const double t : times) sum += t;
  rep.mean_s = sum / static_cast<double>(times.size());
  std::vector<double> sorted = times;
  std::sort(sorted.begin(), sorted.end());
  const std::size_t n = sorted.size();
  rep.median_s = n % 2 == 1 ? sorted[n / 2] : 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]);
  std::size_t p95_idx = static_cast<std::size_t>(std::ceil(0.95 * static_cast<double>(n)));
  p95_idx = std::min(std::max<std::size_t>(p95_idx, 1), n) - 1;
  rep.p95_s = sorted[p95_idx];
  return rep;
}

/// Mark `current` against the mean of a previous measurement of the same
/// model. Drift of 20% or more sets the noise flag (recorded, not fatal).
inline LatencyReport check_stability(const LatencyReport& previous, LatencyReport current) {
  if (previous.mean_s > 0.0) {
    current.noise_drift = std::abs(current.mean_s - previous.mean_s) / previous.mean_s;
    current.noise_flag = current.noise_drift >= 0.2;
  }
  return current;
}

// ---------------------------------------------------------------------------
// Size/latency sweep

struct SweepRow {
  int width_W = 0;
  int depth_K = 0;
  std::int64_t params = 0;
  double mean_latency_s = 0.0;
};

/// Build and measure each configuration on the shared trial set. The rows
/// record the size/latency relationship as data; no ordering is asserted.
inline std::vector<SweepRow> size_latency_sweep(const std::vector<ModelConfig>& configs,
                                                const Tensor<float>& trials, int repeats = 3,
                                                int warmup = 5) {
  std::vector<SweepRow> rows;
  for (const ModelConfig& mc : configs) {
    const Model<float> model = build_model<float>(mc, 0);
    const LatencyReport rep =
        measure_latency(model, trials, repeats, warmup,
                        "W" + std::to_string(mc.width_W) + "K" + std::to_string(mc.depth_K));
    rows.push_back({mc.width_W, mc.depth_K, rep.param_count, rep.mean_s});
  }
  return rows;
}

inline void write_sweep_csv(const std::vector<SweepRow>& rows, std::ostream& os) {
  os << "W,K,params,mean_latency_s\n";
  for (const SweepRow& r : rows)
    os << r.width_W << "," << r.depth_K << "," << r.params << "," << r.mean_latency_s << "\n";
}

inline nlohmann::json latency_to_json(const LatencyReport& r) {
  return {{"model_tag", r.model_tag},     {"n_passes", r.n_passes},
          {"warmup_passes", r.warmup_passes}, {"mean_s", r.mean_s},
          {"median_s", r.median_s},       {"p95_s", r.p95_s},
          {"param_count", r.param_count}, {"hardware", r.hardware},
          {"noise_flag", r.noise_flag},   {"noise_drift", r.noise_drift}};
}

}  // namespace simpleconv
