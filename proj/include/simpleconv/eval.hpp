#pragma once

// Paradigm execution: offline (transductive per-scope normalization) and
// online (streamed, causal, calibration-only statistics) evaluation, the
// fold x run driver, and the ablation harness.

#include <Eigen/Dense>
#include <atomic>
#include <chrono>
#include <cstdint>
#include <exception>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "simpleconv/model.hpp"
#include "simpleconv/pipeline.hpp"
#include "simpleconv/report.hpp"
#include "simpleconv/splits.hpp"
#include "simpleconv/train.hpp"

namespace simpleconv {

struct TrialPrediction {
  int archive_index = 0;
  int subject = 0;
  int session = 0;
  int label = 0;
  int predicted = 0;
};

struct OfflineEval {
  std::vector<TrialPrediction> predictions;
  double accuracy = 0.0;  // percent over all trials
  std::map<std::string, double> scope_accuracy;
};

namespace detail {

template <typename T>
Tensor<T> to_batch(const std::vector<Eigen::MatrixXd>& trials, int expected_channels) {
  const int B = static_cast<int>(trials.size());
  const int C = static_cast<int>(trials.front().rows());
  const int L = static_cast<int>(trials.front().cols());
  if (C != expected_channels)
    throw std::invalid_argument("pipeline produced " + std::to_string(C) +
                                " channels but the model expects " +
                                std::to_string(expected_channels) +
                                " (check include_eog and the archive)");
  Tensor<T> xb({B, C, L});
  for (int i = 0; i < B; ++i) {
    const Eigen::MatrixXd& m = trials[static_cast<std::size_t>(i)];
    if (m.cols() != L)
      throw std::invalid_argument("to_batch: trials disagree in length after resampling");
    for (int c = 0; c < C; ++c)
      for (int t = 0; t < L; ++t) xb(i, c, t) = static_cast<T>(m(c, t));
  }
  return xb;
}

inline int argmax_row(const Tensor<float>& logits, int row) {
  int arg = 0;
  for (int k = 1; k < logits.dim(1); ++k)
    if (logits(row, k) > logits(row, arg)) arg = k;
  return arg;
}

}  // namespace detail

/// Offline evaluation: test trials are grouped by the statistics scope; each
/// scope is normalized with statistics fitted on the full scope itself, the
/// batch-norm statistics are recomputed on the scope batch when the BN trick
/// is on (and the scope holds at least two trials), and predictions come
/// from one Eval-mode forward pass. The input model is never modified.
template <typename T>
OfflineEval evaluate_offline(const Model<T>& model, const TrialArchive& a,
                             const std::vector<int>& test, const PipelineConfig& p,
                             AccessLog* log = nullptr) {
  if (test.empty()) throw std::invalid_argument("evaluate_offline: empty test scope");

  std::map<std::string, std::vector<int>> scopes;
  for (const int idx : test)
    scopes[scope_key_of(a.subject_ids[static_cast<std::size_t>(idx)],
                        a.session_ids[static_cast<std::size_t>(idx)], p.stats_scope)]
        .push_back(idx);

  OfflineEval out;
  int correct_total = 0;
  for (const auto& [key, idxs] : scopes) {
    ProcessedGroup g = process_group(a, idxs, p, model.config.resample_hz, /*causal=*/false, log,
                                     AccessPhase::kPrediction);
    const Tensor<T> xb = detail::to_batch<T>(g.trials, model.config.in_channels);

    const Model<T>* use = &model;
    Model<T> adapted;
    if (p.use_bn_trick && xb.dim(0) >= 2) {
      adapted = recompute_bn_stats(model, xb);
      use = &adapted;
    }
    const ForwardResult<T> res = forward(*use, xb, BnMode::kEval);

    int correct = 0;
    for (std::size_t i = 0; i < idxs.size(); ++i) {
      const int idx = idxs[i];
      TrialPrediction pr;
      pr.archive_index = idx;
      pr.subject = a.subject_ids[static_cast<std::size_t>(idx)];
      pr.session = a.session_ids[static_cast<std::size_t>(idx)];
      pr.label = a.labels[static_cast<std::size_t>(idx)];
      pr.predicted = detail::argmax_row(res.class_logits, static_cast<int>(i));
      correct += pr.predicted == pr.label;
      out.predictions.push_back(pr);
    }
    out.scope_accuracy[key] = 100.0 * correct / static_cast<double>(idxs.size());
    correct_total += correct;
  }
  out.accuracy = 100.0 * correct_total / static_cast<double>(test.size());
  return out;
}

/// Streamed evaluation: one trial in, one prediction out. The object only
/// ever holds statistics fitted before the stream started (calibration data
/// or training-set statistics), so pooled test statistics are unreachable by
/// construction. Filtering is causal.
template <typename T>
class OnlineEvaluator {
 public:
  /// Within-subject and fine-tuning flavors: EA reference, z-score and BN
  /// statistics all come from the subject's calibration trials alone.
  static OnlineEvaluator calibrated(const Model<T>& model, const TrialArchive& a,
                                    const std::vector<int>& calibration, const PipelineConfig& p,
                                    AccessLog* log = nullptr) {
    if (calibration.empty())
      throw std::invalid_argument("online evaluation: empty calibration set");
    OnlineEvaluator ev(model, p);
    ev.kept_rows_ = detail::kept_channel_rows(a, p.include_eog);

    PipelineConfig fit = p;
    fit.stats_scope = StatsScope::kSubject;  // calibration is one block of data
    ProcessedGroup g = process_group(a, calibration, fit, model.config.resample_hz,
                                     /*causal=*/true, log, AccessPhase::kCalibration);
    if (p.use_ea) ev.ea_ = g.stats.ea.begin()->second;
    if (p.use_zscore) ev.z_ = g.stats.zscore.begin()->second;
    if (p.use_bn_trick && g.trials.size() >= 2) {
      const Tensor<T> xb = detail::to_batch<T>(g.trials, model.config.in_channels);
      ev.model_ = recompute_bn_stats(model, xb);
    }
    return ev;
  }

  /// Cross-subject flavor: no calibration data exists, so EA is never
  /// applied to the stream (alignment of the training side is unaffected),
  /// z-score uses pooled training statistics, and BN keeps the running
  /// statistics learned in training. Forcing stream-side EA is a
  /// configuration error.
  static OnlineEvaluator from_training(const Model<T>& model, const TrialArchive& a,
                                       const ZScoreStats& train_stats, const PipelineConfig& p,
                                       bool force_stream_ea = false) {
    if (force_stream_ea)
      throw std::invalid_argument(
          "cross-subject online evaluation cannot align the test stream: no test-subject "
          "data may be read before prediction time");
    OnlineEvaluator ev(model, p);
    ev.kept_rows_ = detail::kept_channel_rows(a, p.include_eog);
    if (p.use_zscore) ev.z_ = train_stats;
    return ev;
  }

  int predict(const TrialArchive& a, int trial_index, AccessLog* log = nullptr) {
    const Eigen::MatrixXd raw =
        detail::logged_trial(a, trial_index, kept_rows_, log, AccessPhase::kPrediction);
    return predict_raw(raw, a.fs);
  }

  int predict_raw(const Eigen::MatrixXd& raw, double fs) {
    Eigen::MatrixXd x = condition_trial(raw, fs, model_.config.resample_hz, /*causal=*/true);
    if (ea_) x = apply_ea(x, *ea_);
    if (z_) x = apply_zscore(x, *z_);
    const Tensor<T> xb = detail::to_batch<T>({x}, model_.config.in_channels);
    const ForwardResult<T> res = forward(model_, xb, BnMode::kEval);
    ++n_predictions_;
    int arg = 0;
    for (int k = 1; k < res.class_logits.dim(1); ++k)
      if (res.class_logits(0, k) > res.class_logits(0, arg)) arg = k;
    return arg;
  }

  int n_predictions() const { return n_predictions_; }

 private:
  OnlineEvaluator(const Model<T>& model, const PipelineConfig& p) : model_(model), pipe_(p) {}

  Model<T> model_;
  PipelineConfig pipe_;
  std::optional<EAReference> ea_;
  std::optional<ZScoreStats> z_;
  std::vector<int> kept_rows_;
  int n_predictions_ = 0;
};

// ---------------------------------------------------------------------------
// Paradigm driver

struct ParadigmOptions {
  Paradigm paradigm = Paradigm::kWithin;
  SplitScheme scheme = SplitScheme::kLoso;
  ModelConfig model;  // in_channels/n_classes/n_subjects are overridden per fold from the data
  TrainConfig train;
  PipelineConfig pipeline;
  int n_runs = 5;
  std::uint64_t master_seed = 0;
  int jobs = 1;
};

namespace detail {

inline bool multi_session(const TrialArchive& a) {
  std::map<int, std::set<int>> sess;
  for (std::size_t i = 0; i < a.session_ids.size(); ++i)
    sess[a.subject_ids[i]].insert(a.session_ids[i]);
  for (const auto& [s, e] : sess)
    if (e.size() > 1) return true;
  return false;
}

inline std::map<int, int> first_session_of(const TrialArchive& a) {
  std::map<int, int> first;
  for (std::size_t i = 0; i < a.session_ids.size(); ++i) {
    const int s = a.subject_ids[i], e = a.session_ids[i];
    auto it = first.find(s);
    if (it == first.end() || e < it->second) first[s] = e;
  }
  return first;
}

inline std::vector<SubjectScore> per_subject_scores(const std::vector<TrialPrediction>& preds,
                                                    bool late_only,
                                                    const std::map<int, int>& first_session) {
  std::map<int, std::pair<int, int>> tally;  // subject -> (correct, total)
  for (const TrialPrediction& p : preds) {
    if (late_only && p.session == first_session.at(p.subject)) continue;
    auto& [c, n] = tally[p.subject];
    c += p.predicted == p.label;
    n += 1;
  }
  std::vector<SubjectScore> out;
  for (const auto& [subject, cn] : tally)
    out.push_back({subject, 100.0 * cn.first / static_cast<double>(cn.second), cn.second});
  return out;
}

/// Train (and fine-tune when the paradigm asks for it) one fold for one run,
/// then evaluate it offline or online per the pipeline. Returns the filled
/// run record.
inline RunRecord execute_run(const TrialArchive& a, const ParadigmOptions& opt, const Fold& fold,
                             int run, std::uint64_t seed, const std::map<int, int>& first_session,
                             AccessLog* log) {
  RunRecord rec;
  rec.run = run;
  rec.seed = seed;

  const auto t_train0 = std::chrono::steady_clock::now();
  ProcessedTrain pt =
      preprocess_train(a, fold.train, opt.pipeline, opt.model.resample_hz, log);

  ModelConfig mc = opt.model;
  mc.in_channels = pt.set.x.dim(1);
  mc.n_classes = a.n_classes();
  mc.n_subjects = opt.pipeline.use_subject_reg && pt.set.n_subjects >= 2 ? pt.set.n_subjects : 0;

  TrainConfig tc = opt.train;
  tc.seed = seed;
  if (!opt.pipeline.use_mixup) tc.mixup_alpha = 0.0;
  if (!opt.pipeline.use_subject_reg) tc.subject_loss_weight = 0.0;

  Model<float> model = build_model<float>(mc, seed);
  AdamState<float> adam;
  train(model, pt.set, tc, &adam);

  if (opt.paradigm == Paradigm::kCrossFinetune) {
    ProcessedGroup cg = process_group(a, fold.calibration, opt.pipeline, opt.model.resample_hz,
                                      /*causal=*/false, log, AccessPhase::kCalibration);
    TrainSet<float> calib;
    calib.x = to_batch<float>(cg.trials, mc.in_channels);
    for (const int idx : cg.indices)
      calib.labels.push_back(static_cast<int>(a.labels[static_cast<std::size_t>(idx)]));
    calib.n_classes = a.n_classes();
    finetune(model, adam, calib, tc);
  }
  rec.train_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t_train0).count();

  const auto t_eval0 = std::chrono::steady_clock::now();
  std::vector<TrialPrediction> preds;
  if (!opt.pipeline.online_mode) {
    preds = evaluate_offline(model, a, fold.test, opt.pipeline, log).predictions;
  } else {
    OnlineEvaluator<float> ev =
        opt.paradigm == Paradigm::kCross
            ? OnlineEvaluator<float>::from_training(model, a, pt.pooled, opt.pipeline)
            : OnlineEvaluator<float>::calibrated(
                  model, a,
                  opt.paradigm == Paradigm::kCrossFinetune ? fold.calibration : fold.train,
                  opt.pipeline, log);
    for (const int idx : fold.test) {
      TrialPrediction pr;
      pr.archive_index = idx;
      pr.subject = a.subject_ids[static_cast<std::size_t>(idx)];
      pr.session = a.session_ids[static_cast<std::size_t>(idx)];
      pr.label = a.labels[static_cast<std::size_t>(idx)];
      pr.predicted = ev.predict(a, idx, log);
      preds.push_back(pr);
    }
  }
  rec.eval_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t_eval0).count();

  rec.subjects = per_subject_scores(preds, /*late_only=*/false, first_session);
  if (opt.paradigm == Paradigm::kCross) {
    // Second-session-only view, reported when the test scope spans sessions.
    bool spans = false;
    for (const TrialPrediction& p : preds)
      spans = spans || p.session != first_session.at(p.subject);
    if (spans) rec.subjects_late_sessions = per_subject_scores(preds, true, first_session);
  }
  return rec;
}

}  // namespace detail

/// Run every fold of the paradigm's split plan n_runs times, each with an
/// independent seed derived from (master_seed, fold, run), and aggregate.
/// Fold failures are rethrown annotated with the fold identity. With jobs >
/// 1 the fold x run grid executes on a small thread pool (disabled while an
/// access log is attached, which needs a serial order).
inline EvalReport run_paradigm(const TrialArchive& a, const ParadigmOptions& opt,
                               AccessLog* log = nullptr) {
  a.validate();
  opt.train.validate();
  if (opt.n_runs < 1) throw std::invalid_argument("run_paradigm: n_runs must be >= 1");
  if (opt.pipeline.online_mode && opt.paradigm == Paradigm::kMdl)
    throw std::invalid_argument(
        "run_paradigm: online evaluation is not defined for the MDL paradigm");

  const SplitPlan plan =
      make_splits(a, opt.paradigm, opt.scheme, derive_seed(opt.master_seed, 0x5b17u));
  const std::map<int, int> first_session = detail::first_session_of(a);

  EvalReport report;
  report.paradigm = paradigm_name(opt.paradigm);
  report.scheme = opt.scheme == SplitScheme::kLoso ? "loso" : "lmso10";
  report.pipeline = opt.pipeline;
  report.model = opt.model;
  report.train = opt.train;
  report.master_seed = opt.master_seed;
  report.n_runs = opt.n_runs;

  const int n_folds = static_cast<int>(plan.folds.size());
  std::vector<FoldRecord> folds(static_cast<std::size_t>(n_folds));
  for (int fi = 0; fi < n_folds; ++fi) {
    folds[static_cast<std::size_t>(fi)].name = plan.folds[static_cast<std::size_t>(fi)].name;
    folds[static_cast<std::size_t>(fi)].test_subjects =
        plan.folds[static_cast<std::size_t>(fi)].test_subjects;
    folds[static_cast<std::size_t>(fi)].runs.resize(static_cast<std::size_t>(opt.n_runs));
  }

  auto one = [&](int fi, int run) {
    const Fold& fold = plan.folds[static_cast<std::size_t>(fi)];
    const std::uint64_t seed = derive_seed(opt.master_seed, static_cast<std::uint64_t>(fi),
                                           static_cast<std::uint64_t>(run));
    if (log) log->set_context(fold.name);
    try {
      folds[static_cast<std::size_t>(fi)].runs[static_cast<std::size_t>(run)] =
          detail::execute_run(a, opt, fold, run, seed, first_session, log);
    } catch (const std::exception& e) {
      throw std::runtime_error("fold " + fold.name + " run " + std::to_string(run) + ": " +
                               e.what());
    }
  };

  const int total = n_folds * opt.n_runs;
  if (opt.jobs <= 1 || log != nullptr || total <= 1) {
    for (int fi = 0; fi < n_folds; ++fi)
      for (int run = 0; run < opt.n_runs; ++run) one(fi, run);
  } else {
    std::atomic<int> next{0};
    std::exception_ptr first_error;
    std::mutex error_mu;
    auto worker = [&] {
      for (int task = next.fetch_add(1); task < total; task = next.fetch_add(1)) {
        try {
          one(task / opt.n_runs, task % opt.n_runs);
        } catch (...) {
          std::lock_guard<std::mutex> lock(error_mu);
          if (!first_error) first_error = std::current_exception();
        }
      }
    };
    std::vector<std::thread> threads;
    const int n_threads = std::min(opt.jobs, total);
    threads.reserve(static_cast<std::size_t>(n_threads));
    for (int i = 0; i < n_threads; ++i) threads.emplace_back(worker);
    for (std::thread& t : threads) t.join();
    if (first_error) std::rethrow_exception(first_error);
  }

  report.folds = std::move(folds);
  finalize_report(report);
  return report;
}

// ---------------------------------------------------------------------------
// Ablation harness

namespace detail {

struct RowSpec {
  std::string name;
  PipelineConfig pipeline;
  bool needs_multi_session = false;  // row is meaningless on single-session data
};

inline std::vector<RowSpec> resolve_ablation_rows(const PipelineConfig& base,
                                                  const std::vector<std::string>& names) {
  std::vector<RowSpec> rows;
  for (const std::string& n : names) {
    if (n == "factorial") {
      // Full factorial over session scope x BN trick x EA x z-score.
      for (int mask = 0; mask < 16; ++mask) {
        RowSpec r;
        r.pipeline = base;
        const bool sess = mask & 8, bn = mask & 4, ea = mask & 2, z = mask & 1;
        r.pipeline.stats_scope = sess ? StatsScope::kSession : StatsScope::kSubject;
        r.pipeline.use_bn_trick = bn;
        r.pipeline.use_ea = ea;
        r.pipeline.use_zscore = z;
        r.name = std::string("sess=") + (sess ? "on" : "off") + ",bn=" + (bn ? "on" : "off") +
                 ",ea=" + (ea ? "on" : "off") + ",z=" + (z ? "on" : "off");
        r.needs_multi_session = !sess;  // scope-off duplicates scope-on without sessions
        rows.push_back(std::move(r));
      }
      continue;
    }
    RowSpec r;
    r.name = n;
    r.pipeline = base;
    if (n == "full") {
    } else if (n == "-bn") {
      r.pipeline.use_bn_trick = false;
    } else if (n == "-ea") {
      r.pipeline.use_ea = false;
    } else if (n == "-session") {
      r.pipeline.stats_scope = StatsScope::kSubject;
      r.needs_multi_session = true;
    } else if (n == "-zscore") {
      r.pipeline.use_zscore = false;
    } else if (n == "-mixup") {
      r.pipeline.use_mixup = false;
    } else if (n == "-subject-reg") {
      r.pipeline.use_subject_reg = false;
    } else if (n == "-everything") {
      r.pipeline.use_ea = false;
      r.pipeline.stats_scope = StatsScope::kSubject;
      r.pipeline.use_bn_trick = false;
      r.pipeline.use_mixup = false;
      r.pipeline.use_subject_reg = false;
    } else if (n == "+eog") {
      r.pipeline.include_eog = true;
    } else if (n == "online") {
      r.pipeline.online_mode = true;
    } else {
      throw std::invalid_argument(
          "unknown ablation row '" + n +
          "' (expected one of: full, -bn, -ea, -session, -zscore, -mixup, -subject-reg, "
          "-everything, +eog, online, factorial)");
    }
    rows.push_back(std::move(r));
  }
  return rows;
}

}  // namespace detail

/// One evaluation per requested row, each differing from the base pipeline
/// by its declared toggles only. The unmodified pipeline runs once and
/// serves as the reference for every row's average gain; the "full" row
/// reuses it, so its gain is exactly zero. Rows that only toggle the session
/// scope are skipped on single-session data, with the reason recorded.
inline AblationTable run_ablation(const TrialArchive& a, const ParadigmOptions& base,
                                  const std::vector<std::string>& row_names,
                                  AccessLog* log = nullptr) {
  const std::vector<detail::RowSpec> specs =
      detail::resolve_ablation_rows(base.pipeline, row_names);
  const bool multi = detail::multi_session(a);

  ParadigmOptions full_opt = base;
  const EvalReport full = run_paradigm(a, full_opt, log);

  AblationTable table;
  table.full_mean = full.aggregates.mean;
  for (const detail::RowSpec& spec : specs) {
    AblationRow row;
    row.name = spec.name;
    row.pipeline = spec.pipeline;
    if (spec.needs_multi_session && !multi) {
      row.skipped = true;
      row.skip_reason = "single-session data: session scope equals subject scope";
      table.rows.push_back(std::move(row));
      continue;
    }
    ParadigmOptions opt = base;
    opt.pipeline = spec.pipeline;
    const bool same_as_full = spec.name == "full";
    row.report = same_as_full ? full : run_paradigm(a, opt, log);
    row.average_gain = row.report.aggregates.mean - table.full_mean;
    table.rows.push_back(std::move(row));
  }
  return table;
}

}  // namespace simpleconv
