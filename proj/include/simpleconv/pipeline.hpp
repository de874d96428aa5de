#pragma once

// Preprocessing orchestration: channel selection, high-pass filtering,
// resampling, Euclidean alignment and z-scoring grouped by statistics scope.
// Every trial read funnels through logged_trial() so an access log can prove
// which trials were touched in which phase (the leak sentinel).

#include <Eigen/Dense>
#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "simpleconv/align.hpp"
#include "simpleconv/archive.hpp"
#include "simpleconv/dsp.hpp"
#include "simpleconv/tensor.hpp"
#include "simpleconv/train.hpp"

namespace simpleconv {

enum class StatsScope { kSubject, kSession };

struct PipelineConfig {
  bool use_ea = true;
  bool use_zscore = true;
  StatsScope stats_scope = StatsScope::kSession;
  bool use_bn_trick = true;
  bool use_mixup = true;
  bool use_subject_reg = true;
  bool include_eog = false;
  bool online_mode = false;
};

inline std::string stats_scope_name(StatsScope s) {
  return s == StatsScope::kSubject ? "subject" : "session";
}

// ---------------------------------------------------------------------------
// Access log: the evaluation layer records every trial read together with the
// phase it happened in, so tests (and the paranoid CLI mode) can verify that
// no held-out trial was consumed before prediction time.

enum class AccessPhase { kTrainingData, kCalibration, kPrediction };

struct AccessRecord {
  int trial = 0;
  AccessPhase phase = AccessPhase::kTrainingData;
  std::string context;  // set by the runner, e.g. the fold name
};

struct AccessLog {
  std::vector<AccessRecord> records;
  std::string context;
  void set_context(std::string c) { context = std::move(c); }
  void note(int trial, AccessPhase phase) { records.push_back({trial, phase, context}); }
  void clear() {
    records.clear();
    context.clear();
  }
};

/// Indices of held-out trials that were read outside the prediction phase.
/// A non-empty `context` restricts the check to records tagged with it (the
/// paradigm runner tags each fold, whose held-out sets differ). Empty result
/// = no leak.
inline std::vector<int> leak_violations(const AccessLog& log, const std::vector<int>& held_out,
                                        const std::string& context = {}) {
  std::vector<int> bad;
  for (const AccessRecord& r : log.records) {
    if (!context.empty() && r.context != context) continue;
    if (r.phase == AccessPhase::kPrediction) continue;
    for (const int t : held_out)
      if (t == r.trial) {
        bad.push_back(r.trial);
        break;
      }
  }
  return bad;
}

// ---------------------------------------------------------------------------

namespace detail {

inline std::vector<int> kept_channel_rows(const TrialArchive& a, bool include_eog) {
  std::vector<int> rows;
  for (int c = 0; c < a.n_channels; ++c)
    if (include_eog || a.channel_kinds[static_cast<std::size_t>(c)] == ChannelKind::kEeg)
      rows.push_back(c);
  if (rows.empty()) throw std::invalid_argument("pipeline: no channels left after selection");
  return rows;
}

inline Eigen::MatrixXd logged_trial(const TrialArchive& a, int idx, const std::vector<int>& rows,
                                    AccessLog* log, AccessPhase phase) {
  if (log) log->note(idx, phase);
  const Eigen::MatrixXd full = a.trial_matrix(idx);
  if (static_cast<int>(rows.size()) == a.n_channels) return full;
  Eigen::MatrixXd out(static_cast<Eigen::Index>(rows.size()), full.cols());
  for (std::size_t r = 0; r < rows.size(); ++r) out.row(static_cast<Eigen::Index>(r)) = full.row(rows[r]);
  return out;
}

}  // namespace detail

/// High-pass (zero-phase offline, causal online) then resample, in double
/// precision. This is the per-trial part of the pipeline; alignment and
/// z-scoring need a scope and live in the group functions below.
inline Eigen::MatrixXd condition_trial(const Eigen::MatrixXd& raw, double fs, double target_hz,
                                       bool causal) {
  const Eigen::MatrixXd filtered = dsp::highpass(raw, fs, 0.5, causal);
  return dsp::resample(filtered, fs, target_hz);
}

inline std::string scope_key_of(int subject, int session, StatsScope scope) {
  std::string key = "s" + std::to_string(subject);
  if (scope == StatsScope::kSession) key += "/e" + std::to_string(session);
  return key;
}

/// Per-scope normalization artifacts fitted on some set of trials.
struct ScopeStats {
  std::map<std::string, EAReference> ea;
  std::map<std::string, ZScoreStats> zscore;
};

/// Conditioned trials plus the scope artifacts fitted on (and applied to)
/// them. `indices[i]` is the archive index behind `trials[i]`.
struct ProcessedGroup {
  std::vector<Eigen::MatrixXd> trials;
  std::vector<int> indices;
  std::vector<std::string> scope_keys;  // one per trial
  ScopeStats stats;
};

/// Condition a set of trials and fit/apply EA and z-score per scope. All
/// statistics come from `indices` itself — callers choose whether that set is
/// training data, calibration data, or a transductive test scope.
inline ProcessedGroup process_group(const TrialArchive& a, const std::vector<int>& indices,
                                    const PipelineConfig& p, double target_hz, bool causal,
                                    AccessLog* log, AccessPhase phase) {
  if (indices.empty()) throw std::invalid_argument("process_group: empty scope");
  const std::vector<int> rows = detail::kept_channel_rows(a, p.include_eog);

  ProcessedGroup g;
  g.indices = indices;
  g.trials.reserve(indices.size());
  g.scope_keys.reserve(indices.size());
  for (const int idx : indices) {
    const Eigen::MatrixXd raw = detail::logged_trial(a, idx, rows, log, phase);
    g.trials.push_back(condition_trial(raw, a.fs, target_hz, causal));
    g.scope_keys.push_back(scope_key_of(a.subject_ids[static_cast<std::size_t>(idx)],
                                        a.session_ids[static_cast<std::size_t>(idx)],
                                        p.stats_scope));
  }

  std::map<std::string, std::vector<std::size_t>> by_scope;
  for (std::size_t i = 0; i < g.trials.size(); ++i) by_scope[g.scope_keys[i]].push_back(i);

  for (const auto& [key, members] : by_scope) {
    std::vector<Eigen::MatrixXd> scoped;
    scoped.reserve(members.size());
    for (const std::size_t i : members) scoped.push_back(g.trials[i]);
    if (p.use_ea) {
      const EAReference ref = fit_ea(scoped, key);
      for (std::size_t j = 0; j < members.size(); ++j) {
        g.trials[members[j]] = apply_ea(g.trials[members[j]], ref);
        scoped[j] = g.trials[members[j]];
      }
      g.stats.ea.emplace(key, ref);
    }
    if (p.use_zscore) {
      const ZScoreStats zs = fit_zscore(scoped, key);
      for (const std::size_t i : members) g.trials[i] = apply_zscore(g.trials[i], zs);
      g.stats.zscore.emplace(key, zs);
    }
  }
  return g;
}

/// Model-ready training pool for one fold: remapped contiguous subject ids
/// plus the pooled post-pipeline statistics an online cross-subject
/// evaluator needs.
struct ProcessedTrain {
  TrainSet<float> set;
  std::map<int, int> subject_remap;  // raw archive id -> contiguous id
  ZScoreStats pooled;                // over all processed training trials
  int t_len = 0;
};

inline ProcessedTrain preprocess_train(const TrialArchive& a, const std::vector<int>& train_indices,
                                       const PipelineConfig& p, double target_hz,
                                       AccessLog* log = nullptr) {
  ProcessedGroup g = process_group(a, train_indices, p, target_hz, /*causal=*/false, log,
                                   AccessPhase::kTrainingData);

  ProcessedTrain out;
  for (const int idx : g.indices)
    out.subject_remap.emplace(static_cast<int>(a.subject_ids[static_cast<std::size_t>(idx)]), 0);
  int next = 0;
  for (auto& [id, slot] : out.subject_remap) slot = next++;

  const int n = static_cast<int>(g.trials.size());
  const int C = static_cast<int>(g.trials.front().rows());
  out.t_len = static_cast<int>(g.trials.front().cols());
  out.set.x = Tensor<float>({n, C, out.t_len});
  for (int i = 0; i < n; ++i) {
    const Eigen::MatrixXd& m = g.trials[static_cast<std::size_t>(i)];
    if (m.cols() != out.t_len)
      throw std::invalid_argument("preprocess_train: trials disagree in length after resampling");
    for (int c = 0; c < C; ++c)
      for (int t = 0; t < out.t_len; ++t) out.set.x(i, c, t) = static_cast<float>(m(c, t));
    const int idx = g.indices[static_cast<std::size_t>(i)];
    out.set.labels.push_back(static_cast<int>(a.labels[static_cast<std::size_t>(idx)]));
    out.set.subjects.push_back(
        out.subject_remap.at(static_cast<int>(a.subject_ids[static_cast<std::size_t>(idx)])));
  }
  out.set.n_classes = a.n_classes();
  out.set.n_subjects = next;
  out.pooled = fit_zscore(g.trials, "train-pool");
  return out;
}

}  // namespace simpleconv
