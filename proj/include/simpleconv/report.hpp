#pragma once

// Evaluation reports: per-fold/run/subject accuracies, aggregation with both
// standard-deviation conventions, JSON round-trip and a flat CSV export.

#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "simpleconv/model.hpp"
#include "simpleconv/pipeline.hpp"
#include "simpleconv/train.hpp"

namespace simpleconv {

struct SubjectScore {
  int subject = 0;
  double accuracy = 0.0;  // percent
  int n_trials = 0;
};

struct RunRecord {
  int run = 0;
  std::uint64_t seed = 0;
  double train_seconds = 0.0;
  double eval_seconds = 0.0;
  std::vector<SubjectScore> subjects;                // full test view
  std::vector<SubjectScore> subjects_late_sessions;  // non-first-session view (optional)
};

struct FoldRecord {
  std::string name;
  std::vector<int> test_subjects;
  std::vector<RunRecord> runs;
};

struct SubjectSummary {
  int subject = 0;
  double mean = 0.0;
  double std_runs = 0.0;  // population convention
  std::vector<double> per_run;
};

struct Aggregates {
  std::vector<SubjectSummary> subjects;
  double mean = 0.0;
  double std_subjects_population = 0.0;
  double std_subjects_sample = 0.0;
  double std_runs = 0.0;  // population std of per-run overall means
  int n_trainings = 0;
};

struct EvalReport {
  int version = 1;
  std::string paradigm;
  std::string scheme;
  PipelineConfig pipeline;
  ModelConfig model;
  TrainConfig train;
  std::uint64_t master_seed = 0;
  int n_runs = 1;
  std::vector<FoldRecord> folds;
  Aggregates aggregates;
  Aggregates aggregates_late_sessions;  // meaningful when has_late_sessions
  bool has_late_sessions = false;
};

// ---------------------------------------------------------------------------
// Aggregation

inline double mean_of(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  double s = 0.0;
  for (const double x : v) s += x;
  return s / static_cast<double>(v.size());
}

inline double std_population(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  const double mu = mean_of(v);
  double s = 0.0;
  for (const double x : v) s += (x - mu) * (x - mu);
  return std::sqrt(s / static_cast<double>(v.size()));
}

inline double std_sample(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double mu = mean_of(v);
  double s = 0.0;
  for (const double x : v) s += (x - mu) * (x - mu);
  return std::sqrt(s / static_cast<double>(v.size() - 1));
}

/// Fold/run/subject scores -> subject summaries and overall statistics.
/// Purely a function of the multiset of (subject, run, accuracy) triples, so
/// the result is invariant to subject and fold ordering.
inline Aggregates aggregate_scores(
    const std::vector<FoldRecord>& folds,
    const std::vector<SubjectScore> RunRecord::*view = &RunRecord::subjects) {
  Aggregates agg;
  std::map<int, std::map<int, std::vector<double>>> by_subject_run;  // subject -> run -> scores
  std::map<int, std::vector<double>> by_run;                         // run -> subject scores
  for (const FoldRecord& f : folds)
    for (const RunRecord& r : f.runs) {
      agg.n_trainings += 1;
      for (const SubjectScore& s : r.*view) {
        by_subject_run[s.subject][r.run].push_back(s.accuracy);
        by_run[r.run].push_back(s.accuracy);
      }
    }

  std::vector<double> subject_means;
  for (const auto& [subject, runs] : by_subject_run) {
    SubjectSummary sum;
    sum.subject = subject;
    for (const auto& [run, scores] : runs) sum.per_run.push_back(mean_of(scores));
    sum.mean = mean_of(sum.per_run);
    sum.std_runs = std_population(sum.per_run);
    subject_means.push_back(sum.mean);
    agg.subjects.push_back(std::move(sum));
  }
  agg.mean = mean_of(subject_means);
  agg.std_subjects_population = std_population(subject_means);
  agg.std_subjects_sample = std_sample(subject_means);

  std::vector<double> run_means;
  for (const auto& [run, scores] : by_run) run_means.push_back(mean_of(scores));
  agg.std_runs = std_population(run_means);
  return agg;
}

/// Recompute both aggregate blocks of a report from its fold records.
inline void finalize_report(EvalReport& r) {
  r.aggregates = aggregate_scores(r.folds);
  bool any_late = false;
  for (const FoldRecord& f : r.folds)
    for (const RunRecord& run : f.runs) any_late = any_late || !run.subjects_late_sessions.empty();
  r.has_late_sessions = any_late;
  r.aggregates_late_sessions =
      any_late ? aggregate_scores(r.folds, &RunRecord::subjects_late_sessions) : Aggregates{};
}

// ---------------------------------------------------------------------------
// JSON

inline nlohmann::json to_json(const PipelineConfig& p) {
  return {{"use_ea", p.use_ea},
          {"use_zscore", p.use_zscore},
          {"stats_scope", stats_scope_name(p.stats_scope)},
          {"use_bn_trick", p.use_bn_trick},
          {"use_mixup", p.use_mixup},
          {"use_subject_reg", p.use_subject_reg},
          {"include_eog", p.include_eog},
          {"online_mode", p.online_mode}};
}

inline PipelineConfig pipeline_from_json(const nlohmann::json& j) {
  PipelineConfig p;
  p.use_ea = j.at("use_ea").get<bool>();
  p.use_zscore = j.at("use_zscore").get<bool>();
  const std::string scope = j.at("stats_scope").get<std::string>();
  if (scope != "subject" && scope != "session")
    throw std::invalid_argument("pipeline_from_json: unknown stats_scope '" + scope + "'");
  p.stats_scope = scope == "subject" ? StatsScope::kSubject : StatsScope::kSession;
  p.use_bn_trick = j.at("use_bn_trick").get<bool>();
  p.use_mixup = j.at("use_mixup").get<bool>();
  p.use_subject_reg = j.at("use_subject_reg").get<bool>();
  p.include_eog = j.at("include_eog").get<bool>();
  p.online_mode = j.at("online_mode").get<bool>();
  return p;
}

inline nlohmann::json to_json(const ModelConfig& m) {
  return {{"width_W", m.width_W},     {"depth_K", m.depth_K},
          {"kernel_S", m.kernel_S},   {"in_channels", m.in_channels},
          {"n_classes", m.n_classes}, {"n_subjects", m.n_subjects},
          {"resample_hz", m.resample_hz}};
}

inline ModelConfig model_from_json(const nlohmann::json& j) {
  ModelConfig m;
  m.width_W = j.at("width_W").get<int>();
  m.depth_K = j.at("depth_K").get<int>();
  m.kernel_S = j.at("kernel_S").get<int>();
  m.in_channels = j.at("in_channels").get<int>();
  m.n_classes = j.at("n_classes").get<int>();
  m.n_subjects = j.at("n_subjects").get<int>();
  m.resample_hz = j.at("resample_hz").get<float>();
  return m;
}

inline nlohmann::json to_json(const TrainConfig& t) {
  return {{"epochs", t.epochs},
          {"decay_epoch", t.decay_epoch},
          {"decay_factor", t.decay_factor},
          {"base_lr", t.base_lr},
          {"batch_size", t.batch_size},
          {"mixup_alpha", t.mixup_alpha},
          {"subject_loss_weight", t.subject_loss_weight},
          {"seed", t.seed},
          {"finetune_epochs", t.finetune_epochs}};
}

inline TrainConfig train_from_json(const nlohmann::json& j) {
  TrainConfig t;
  t.epochs = j.at("epochs").get<int>();
  t.decay_epoch = j.at("decay_epoch").get<int>();
  t.decay_factor = j.at("decay_factor").get<double>();
  t.base_lr = j.at("base_lr").get<double>();
  t.batch_size = j.at("batch_size").get<int>();
  t.mixup_alpha = j.at("mixup_alpha").get<double>();
  t.subject_loss_weight = j.at("subject_loss_weight").get<double>();
  t.seed = j.at("seed").get<std::uint64_t>();
  t.finetune_epochs = j.at("finetune_epochs").get<int>();
  return t;
}

namespace detail {

inline nlohmann::json scores_json(const std::vector<SubjectScore>& v) {
  nlohmann::json arr = nlohmann::json::array();
  for (const SubjectScore& s : v)
    arr.push_back({{"subject", s.subject}, {"accuracy", s.accuracy}, {"n_trials", s.n_trials}});
  return arr;
}

inline std::vector<SubjectScore> scores_from_json(const nlohmann::json& arr) {
  std::vector<SubjectScore> v;
  for (const auto& j : arr)
    v.push_back({j.at("subject").get<int>(), j.at("accuracy").get<double>(),
                 j.at("n_trials").get<int>()});
  return v;
}

inline nlohmann::json aggregates_json(const Aggregates& a) {
  nlohmann::json subs = nlohmann::json::array();
  for (const SubjectSummary& s : a.subjects)
    subs.push_back({{"subject", s.subject},
                    {"mean", s.mean},
                    {"std_runs", s.std_runs},
                    {"per_run", s.per_run}});
  return {{"subjects", subs},
          {"mean", a.mean},
          {"std_subjects_population", a.std_subjects_population},
          {"std_subjects_sample", a.std_subjects_sample},
          {"std_runs", a.std_runs},
          {"n_trainings", a.n_trainings}};
}

inline Aggregates aggregates_from_json(const nlohmann::json& j) {
  Aggregates a;
  for (const auto& s : j.at("subjects")) {
    SubjectSummary sum;
    sum.subject = s.at("subject").get<int>();
    sum.mean = s.at("mean").get<double>();
    sum.std_runs = s.at("std_runs").get<double>();
    sum.per_run = s.at("per_run").get<std::vector<double>>();
    a.subjects.push_back(std::move(sum));
  }
  a.mean = j.at("mean").get<double>();
  a.std_subjects_population = j.at("std_subjects_population").get<double>();
  a.std_subjects_sample = j.at("std_subjects_sample").get<double>();
  a.std_runs = j.at("std_runs").get<double>();
  a.n_trainings = j.at("n_trainings").get<int>();
  return a;
}

}  // namespace detail

inline nlohmann::json report_to_json(const EvalReport& r) {
  nlohmann::json folds = nlohmann::json::array();
  for (const FoldRecord& f : r.folds) {
    nlohmann::json runs = nlohmann::json::array();
    for (const RunRecord& run : f.runs)
      runs.push_back({{"run", run.run},
                      {"seed", run.seed},
                      {"train_seconds", run.train_seconds},
                      {"eval_seconds", run.eval_seconds},
                      {"subjects", detail::scores_json(run.subjects)},
                      {"subjects_late_sessions", detail::scores_json(run.subjects_late_sessions)}});
    folds.push_back({{"name", f.name}, {"test_subjects", f.test_subjects}, {"runs", runs}});
  }
  nlohmann::json j = {{"version", r.version},
                      {"paradigm", r.paradigm},
                      {"scheme", r.scheme},
                      {"config",
                       {{"pipeline", to_json(r.pipeline)},
                        {"model", to_json(r.model)},
                        {"train", to_json(r.train)},
                        {"master_seed", r.master_seed},
                        {"n_runs", r.n_runs}}},
                      {"folds", folds},
                      {"aggregates", detail::aggregates_json(r.aggregates)},
                      {"has_late_sessions", r.has_late_sessions}};
  if (r.has_late_sessions)
    j["aggregates_late_sessions"] = detail::aggregates_json(r.aggregates_late_sessions);
  return j;
}

inline EvalReport report_from_json(const nlohmann::json& j) {
  EvalReport r;
  r.version = j.at("version").get<int>();
  if (r.version != 1)
    throw std::invalid_argument("report_from_json: unsupported version " +
                                std::to_string(r.version));
  r.paradigm = j.at("paradigm").get<std::string>();
  r.scheme = j.at("scheme").get<std::string>();
  const auto& cfg = j.at("config");
  r.pipeline = pipeline_from_json(cfg.at("pipeline"));
  r.model = model_from_json(cfg.at("model"));
  r.train = train_from_json(cfg.at("train"));
  r.master_seed = cfg.at("master_seed").get<std::uint64_t>();
  r.n_runs = cfg.at("n_runs").get<int>();
  for (const auto& f : j.at("folds")) {
    FoldRecord fold;
    fold.name = f.at("name").get<std::string>();
    fold.test_subjects = f.at("test_subjects").get<std::vector<int>>();
    for (const auto& run : f.at("runs")) {
      RunRecord rec;
      rec.run = run.at("run").get<int>();
      rec.seed = run.at("seed").get<std::uint64_t>();
      rec.train_seconds = run.at("train_seconds").get<double>();
      rec.eval_seconds = run.at("eval_seconds").get<double>();
      rec.subjects = detail::scores_from_json(run.at("subjects"));
      rec.subjects_late_sessions = detail::scores_from_json(run.at("subjects_late_sessions"));
      fold.runs.push_back(std::move(rec));
    }
    r.folds.push_back(std::move(fold));
  }
  r.has_late_sessions = j.at("has_late_sessions").get<bool>();
  r.aggregates = detail::aggregates_from_json(j.at("aggregates"));
  if (r.has_late_sessions)
    r.aggregates_late_sessions = detail::aggregates_from_json(j.at("aggregates_late_sessions"));
  return r;
}

inline void write_report_json(const EvalReport& r, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot open report path: " + path);
  os << report_to_json(r).dump(2) << "\n";
}

/// Flat (fold, run, subject, accuracy) rows for spreadsheet use.
inline void write_report_csv(const EvalReport& r, std::ostream& os) {
  os << "fold,run,subject,accuracy\n";
  for (const FoldRecord& f : r.folds)
    for (const RunRecord& run : f.runs)
      for (const SubjectScore& s : run.subjects)
        os << f.name << "," << run.run << "," << s.subject << "," << s.accuracy << "\n";
}

inline void write_report_csv(const EvalReport& r, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot open report path: " + path);
  write_report_csv(r, os);
}

// ---------------------------------------------------------------------------
// Ablation table

struct AblationRow {
  std::string name;
  bool skipped = false;
  std::string skip_reason;
  PipelineConfig pipeline;
  EvalReport report;        // meaningful when !skipped
  double average_gain = 0;  // row mean minus full-pipeline mean
};

struct AblationTable {
  std::vector<AblationRow> rows;
  double full_mean = 0.0;  // reference accuracy of the unmodified pipeline
};

inline nlohmann::json ablation_to_json(const AblationTable& t) {
  nlohmann::json rows = nlohmann::json::array();
  for (const AblationRow& r : t.rows) {
    nlohmann::json row = {{"name", r.name},
                          {"skipped", r.skipped},
                          {"pipeline", to_json(r.pipeline)}};
    if (r.skipped) {
      row["skip_reason"] = r.skip_reason;
    } else {
      row["report"] = report_to_json(r.report);
      row["mean"] = r.report.aggregates.mean;
      row["average_gain"] = r.average_gain;
    }
    rows.push_back(std::move(row));
  }
  return {{"version", 1}, {"full_mean", t.full_mean}, {"rows", rows}};
}

inline void write_ablation_csv(const AblationTable& t, std::ostream& os) {
  os << "row,skipped,mean,average_gain,reason\n";
  for (const AblationRow& r : t.rows) {
    if (r.skipped)
      os << r.name << ",1,,," << r.skip_reason << "\n";
    else
      os << r.name << ",0," << r.report.aggregates.mean << "," << r.average_gain << ",\n";
  }
}

}  // namespace simpleconv
