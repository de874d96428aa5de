// Command-line front end binding the library modules into reproducible
// experiments: synthetic data generation, training, paradigm evaluation,
// ablations, the latency bench, and embedding export.
//
// Every artifact-producing command writes a flat key=value snapshot
// (config.txt) next to its outputs. `simpleconv --config <snapshot>` — or any
// command plus `--config` — replays the run; flags given on the command line
// override snapshot values. Exit codes: 0 success, 1 runtime failure,
// 2 command-line error, 3 missing file, 4 invalid configuration.

#include <CLI11.hpp>

#include <charconv>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>
#include <simpleconv/archive.hpp>
#include <simpleconv/bench.hpp>
#include <simpleconv/eval.hpp>
#include <simpleconv/model.hpp>
#include <simpleconv/pipeline.hpp>
#include <simpleconv/report.hpp>
#include <simpleconv/rng.hpp>
#include <simpleconv/splits.hpp>
#include <simpleconv/synth.hpp>
#include <simpleconv/train.hpp>

namespace fs = std::filesystem;
using namespace simpleconv;

namespace {

constexpr int kExitRuntime = 1;
constexpr int kExitUsage = 2;
constexpr int kExitMissingFile = 3;
constexpr int kExitBadConfig = 4;

/// Raised for paths the user named but that do not exist; mapped to exit 3.
struct MissingFileError : std::runtime_error {
  explicit MissingFileError(const std::string& path)
      : std::runtime_error("missing file: " + path) {}
};

void require_file(const std::string& path) {
  if (!fs::exists(path)) throw MissingFileError(path);
}

std::string fmt_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

// ---------------------------------------------------------------------------
// Config snapshots: flat key=value text, one pair per line, first line names
// the command. Keys reuse the long option names so a snapshot can be replayed
// verbatim through --config.

using Snapshot = std::vector<std::pair<std::string, std::string>>;

void write_snapshot(const fs::path& path, const std::string& command, const Snapshot& kv) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write snapshot: " + path.string());
  os << "command=" << command << "\n";
  for (const auto& [k, v] : kv) os << k << "=" << v << "\n";
}

Snapshot read_key_values(const std::string& path) {
  require_file(path);
  std::ifstream is(path);
  Snapshot kv;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("config line without '=': \"" + line + "\"");
    kv.emplace_back(line.substr(0, eq), line.substr(eq + 1));
  }
  return kv;
}

/// Expands `--config <file>` before CLI11 sees the command line: snapshot
/// pairs become `--key=value` tokens appended after the explicit arguments,
/// except for keys the user already passed (explicit flags win). A `command=`
/// line supplies the subcommand when none was given and must agree with it
/// otherwise.
std::vector<std::string> expand_config(const std::vector<std::string>& argv_in) {
  std::vector<std::string> args;
  std::string config_path;
  for (std::size_t i = 0; i < argv_in.size(); ++i) {
    const std::string& a = argv_in[i];
    if (a == "--config") {
      if (i + 1 >= argv_in.size())
        throw std::invalid_argument("--config expects a file path");
      config_path = argv_in[++i];
    } else if (a.rfind("--config=", 0) == 0) {
      config_path = a.substr(9);
    } else {
      args.push_back(a);
    }
  }
  if (config_path.empty()) return args;

  std::set<std::string> explicit_keys;
  for (const std::string& a : args) {
    if (a.rfind("--", 0) != 0) continue;
    explicit_keys.insert(a.substr(2, a.find('=') - 2));
  }
  // The subcommand can only be the very first token; later bare tokens are
  // values of space-separated flags.
  std::string subcommand;
  if (!args.empty() && args.front().rfind("-", 0) != 0) subcommand = args.front();

  for (const auto& [k, v] : read_key_values(config_path)) {
    if (k == "command") {
      if (subcommand.empty()) {
        args.insert(args.begin(), v);
        subcommand = v;
      } else if (subcommand != v) {
        throw std::invalid_argument("snapshot is for command '" + v +
                                    "' but '" + subcommand + "' was requested");
      }
    } else if (!explicit_keys.count(k)) {
      args.push_back("--" + k + "=" + v);
    }
  }
  return args;
}

// ---------------------------------------------------------------------------
// Shared option groups.

struct ModelOpts {
  std::string preset = "cross";
  int W = 0, K = -1, S = 0;  // 0 / -1: take the preset's value
  double resample_hz = 0.0;

  void attach(CLI::App* cmd) {
    cmd->add_option("--preset", preset, "Architecture preset")
        ->check(CLI::IsMember({"within", "cross"}))
        ->capture_default_str();
    cmd->add_option("--W", W, "Width (feature maps out of the embedding conv)");
    cmd->add_option("--K", K, "Depth (two-conv blocks; total layers = 2K+2)");
    cmd->add_option("--S", S, "Convolution kernel size");
    cmd->add_option("--resample-hz", resample_hz, "Target sampling rate (Hz)");
  }

  ModelConfig resolve(int in_channels, int n_classes, int n_subjects) const {
    ModelConfig mc = preset == "within" ? preset_within(in_channels, n_classes, n_subjects)
                                        : preset_cross(in_channels, n_classes, n_subjects);
    if (W > 0) mc.width_W = W;
    if (K >= 0) mc.depth_K = K;
    if (S > 0) mc.kernel_S = S;
    if (resample_hz > 0) mc.resample_hz = static_cast<float>(resample_hz);
    return mc;
  }

  void snapshot(Snapshot& kv, const ModelConfig& mc) const {
    kv.emplace_back("preset", preset);
    kv.emplace_back("W", std::to_string(mc.width_W));
    kv.emplace_back("K", std::to_string(mc.depth_K));
    kv.emplace_back("S", std::to_string(mc.kernel_S));
    kv.emplace_back("resample-hz", fmt_double(mc.resample_hz));
  }
};

struct PipelineOpts {
  PipelineConfig p;
  std::string scope = "session";

  void attach(CLI::App* cmd) {
    cmd->add_flag("--ea,!--no-ea", p.use_ea, "Euclidean alignment");
    cmd->add_flag("--zscore,!--no-zscore", p.use_zscore, "Per-scope z-scoring");
    cmd->add_flag("--bn-trick,!--no-bn-trick", p.use_bn_trick,
                  "Recompute BN statistics on the evaluation scope");
    cmd->add_flag("--mixup,!--no-mixup", p.use_mixup, "Mixup augmentation");
    cmd->add_flag("--subject-reg,!--no-subject-reg", p.use_subject_reg,
                  "Auxiliary subject-classification loss");
    cmd->add_option("--scope", scope, "Statistics scope")
        ->check(CLI::IsMember({"subject", "session"}))
        ->capture_default_str();
    cmd->add_flag("--eog", p.include_eog, "Keep EOG channels as model inputs");
    cmd->add_flag("--online", p.online_mode, "Streamed (causal, one-trial) evaluation");
  }

  PipelineConfig resolve() const {
    PipelineConfig out = p;
    out.stats_scope = scope == "subject" ? StatsScope::kSubject : StatsScope::kSession;
    return out;
  }

  void snapshot(Snapshot& kv) const {
    const PipelineConfig r = resolve();
    kv.emplace_back("ea", r.use_ea ? "true" : "false");
    kv.emplace_back("zscore", r.use_zscore ? "true" : "false");
    kv.emplace_back("bn-trick", r.use_bn_trick ? "true" : "false");
    kv.emplace_back("mixup", r.use_mixup ? "true" : "false");
    kv.emplace_back("subject-reg", r.use_subject_reg ? "true" : "false");
    kv.emplace_back("scope", stats_scope_name(r.stats_scope));
    kv.emplace_back("eog", r.include_eog ? "true" : "false");
    kv.emplace_back("online", r.online_mode ? "true" : "false");
  }
};

struct TrainOpts {
  TrainConfig t;

  void attach(CLI::App* cmd) {
    cmd->add_option("--epochs", t.epochs, "Training epochs")->capture_default_str();
    cmd->add_option("--decay-epoch", t.decay_epoch, "Epoch index of the single lr decay")
        ->capture_default_str();
    cmd->add_option("--decay-factor", t.decay_factor, "Learning-rate decay factor")
        ->capture_default_str();
    cmd->add_option("--lr", t.base_lr, "Base learning rate")->capture_default_str();
    cmd->add_option("--batch-size", t.batch_size, "Mini-batch size")->capture_default_str();
    cmd->add_option("--mixup-alpha", t.mixup_alpha, "Mixup Beta(alpha, alpha) parameter")
        ->capture_default_str();
    cmd->add_option("--subject-loss-weight", t.subject_loss_weight,
                    "Weight of the auxiliary subject loss")
        ->capture_default_str();
    cmd->add_option("--finetune-epochs", t.finetune_epochs,
                    "Fine-tuning epochs (cross-ft paradigm)")
        ->capture_default_str();
  }

  void snapshot(Snapshot& kv) const {
    kv.emplace_back("epochs", std::to_string(t.epochs));
    kv.emplace_back("decay-epoch", std::to_string(t.decay_epoch));
    kv.emplace_back("decay-factor", fmt_double(t.decay_factor));
    kv.emplace_back("lr", fmt_double(t.base_lr));
    kv.emplace_back("batch-size", std::to_string(t.batch_size));
    kv.emplace_back("mixup-alpha", fmt_double(t.mixup_alpha));
    kv.emplace_back("subject-loss-weight", fmt_double(t.subject_loss_weight));
    kv.emplace_back("finetune-epochs", std::to_string(t.finetune_epochs));
  }
};

struct SeedOpt {
  std::uint64_t seed = 0;
  CLI::Option* opt = nullptr;

  void attach(CLI::App* cmd) {
    opt = cmd->add_option("--seed", seed, "Master seed (env SIMPLECONV_SEED as fallback)")
              ->capture_default_str();
  }

  /// CLI flag > SIMPLECONV_SEED environment variable > 0.
  std::uint64_t resolve() const {
    if (opt != nullptr && opt->count() > 0) return seed;
    if (const char* env = std::getenv("SIMPLECONV_SEED")) {
      std::uint64_t v = 0;
      const std::string s(env);
      const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
      if (res.ec != std::errc{} || res.ptr != s.data() + s.size())
        throw std::invalid_argument("SIMPLECONV_SEED is not an unsigned integer: " + s);
      return v;
    }
    return seed;
  }
};

fs::path prepare_out_dir(const std::string& out) {
  fs::path dir(out);
  fs::create_directories(dir);
  return dir;
}

Paradigm parse_paradigm(const std::string& s) {
  if (s == "within") return Paradigm::kWithin;
  if (s == "cross") return Paradigm::kCross;
  if (s == "cross-ft") return Paradigm::kCrossFinetune;
  if (s == "mdl") return Paradigm::kMdl;
  throw std::invalid_argument("unknown paradigm: " + s);
}

// ---------------------------------------------------------------------------
// synth

struct SynthCmd {
  SynthConfig cfg;
  SeedOpt seed;
  std::string out = ".";

  void attach(CLI::App* cmd) {
    cmd->add_option("--subjects", cfg.n_subjects, "Number of subjects")->capture_default_str();
    cmd->add_option("--sessions", cfg.n_sessions, "Sessions per subject")->capture_default_str();
    cmd->add_option("--trials", cfg.trials_per_session, "Trials per session")
        ->capture_default_str();
    cmd->add_option("--channels", cfg.n_channels, "EEG channels")->capture_default_str();
    cmd->add_option("--eog-channels", cfg.n_eog, "Extra EOG channels")->capture_default_str();
    cmd->add_option("--fs", cfg.fs, "Sampling rate (Hz)")->capture_default_str();
    cmd->add_option("--duration", cfg.duration_s, "Trial duration (s)")->capture_default_str();
    cmd->add_option("--classes", cfg.n_classes, "Number of classes")->capture_default_str();
    cmd->add_option("--noise", cfg.noise_scale, "Noise scale (1 = SNR ~ 0 dB, 0 = clean)")
        ->capture_default_str();
    seed.attach(cmd);
    cmd->add_option("--out", out, "Output directory")->capture_default_str();
  }

  int run() {
    cfg.seed = seed.resolve();
    const TrialArchive a = synth_generate(cfg);
    const fs::path dir = prepare_out_dir(out);
    const fs::path file = dir / "synth.esc1";
    save_archive(a, file.string());

    Snapshot kv{{"subjects", std::to_string(cfg.n_subjects)},
                {"sessions", std::to_string(cfg.n_sessions)},
                {"trials", std::to_string(cfg.trials_per_session)},
                {"channels", std::to_string(cfg.n_channels)},
                {"eog-channels", std::to_string(cfg.n_eog)},
                {"fs", fmt_double(cfg.fs)},
                {"duration", fmt_double(cfg.duration_s)},
                {"classes", std::to_string(cfg.n_classes)},
                {"noise", fmt_double(cfg.noise_scale)},
                {"seed", std::to_string(cfg.seed)},
                {"out", out}};
    write_snapshot(dir / "config.txt", "synth", kv);

    std::cout << "wrote " << file.string() << " (" << a.n_trials() << " trials, "
              << a.n_channels << " channels, " << a.n_samples << " samples @ " << a.fs
              << " Hz)\n";
    return 0;
  }
};

// ---------------------------------------------------------------------------
// params

struct ParamsCmd {
  ModelOpts model;
  int channels = 22;
  int classes = 4;
  int subjects = 0;

  void attach(CLI::App* cmd) {
    model.attach(cmd);
    cmd->add_option("--channels", channels, "Model input channels")->capture_default_str();
    cmd->add_option("--classes", classes, "Number of classes")->capture_default_str();
    cmd->add_option("--subjects", subjects, "Subject-head width (0 = no subject head)")
        ->capture_default_str();
  }

  int run() {
    const ModelConfig mc = model.resolve(channels, classes, subjects);
    Model<float> m = build_model<float>(mc, 0);
    std::cout << count_params(m) << "\n";
    return 0;
  }
};

// ---------------------------------------------------------------------------
// train: fit one model on every trial of an archive and save the checkpoint.

struct TrainCmd {
  std::string data;
  ModelOpts model;
  PipelineOpts pipeline;
  TrainOpts train_opts;
  SeedOpt seed;
  std::string out = ".";

  void attach(CLI::App* cmd) {
    cmd->add_option("--data", data, "ESC1 archive")->required();
    model.attach(cmd);
    pipeline.attach(cmd);
    train_opts.attach(cmd);
    seed.attach(cmd);
    cmd->add_option("--out", out, "Output directory")->capture_default_str();
  }

  int run() {
    require_file(data);
    const TrialArchive a = load_archive(data);
    a.validate();
    const PipelineConfig p = pipeline.resolve();

    std::vector<int> all(static_cast<std::size_t>(a.n_trials()));
    std::iota(all.begin(), all.end(), 0);
    ModelConfig mc = model.resolve(1, 2, 0);
    const ProcessedTrain pt = preprocess_train(a, all, p, mc.resample_hz);
    mc.in_channels = pt.set.x.dim(1);
    mc.n_classes = a.n_classes();
    mc.n_subjects = (p.use_subject_reg && pt.set.n_subjects >= 2) ? pt.set.n_subjects : 0;

    TrainConfig tc = train_opts.t;
    tc.seed = seed.resolve();
    if (!p.use_mixup) tc.mixup_alpha = 0.0;
    if (!p.use_subject_reg) tc.subject_loss_weight = 0.0;
    tc.validate();

    Model<float> m = build_model<float>(mc, tc.seed);
    AdamState<float> adam;
    const TrainHistory hist = train(m, pt.set, tc, &adam);

    const fs::path dir = prepare_out_dir(out);
    save_model(m, (dir / "model.escm").string());
    {
      std::ofstream os(dir / "train_history.csv");
      os << "epoch,lr,task_loss,subject_loss,total_loss,train_accuracy,seconds\n";
      for (std::size_t e = 0; e < hist.size(); ++e) {
        const EpochStats& s = hist[e];
        os << e << ',' << fmt_double(s.lr) << ',' << fmt_double(s.task_loss) << ','
           << fmt_double(s.subject_loss) << ',' << fmt_double(s.total_loss) << ','
           << fmt_double(s.train_accuracy) << ',' << fmt_double(s.seconds) << "\n";
      }
    }

    Snapshot kv{{"data", data}};
    model.snapshot(kv, mc);
    pipeline.snapshot(kv);
    train_opts.snapshot(kv);
    kv.emplace_back("seed", std::to_string(tc.seed));
    kv.emplace_back("out", out);
    write_snapshot(dir / "config.txt", "train", kv);

    std::cout << "wrote " << (dir / "model.escm").string() << " (" << count_params(m)
              << " params";
    if (!hist.empty())
      std::cout << ", final train accuracy " << fmt_double(hist.back().train_accuracy) << "%";
    std::cout << ")\n";
    return 0;
  }
};

// ---------------------------------------------------------------------------
// eval / ablate share the paradigm-runner plumbing.

struct RunnerOpts {
  std::string data;
  std::string paradigm = "cross";
  std::string scheme = "loso";
  ModelOpts model;
  PipelineOpts pipeline;
  TrainOpts train_opts;
  SeedOpt seed;
  int runs = 5;
  int jobs = 1;
  std::string out = ".";

  void attach(CLI::App* cmd) {
    cmd->add_option("--data", data, "ESC1 archive")->required();
    cmd->add_option("--paradigm", paradigm, "Evaluation paradigm")
        ->check(CLI::IsMember({"within", "cross", "cross-ft", "mdl"}))
        ->capture_default_str();
    cmd->add_option("--scheme", scheme, "Cross-validation scheme")
        ->check(CLI::IsMember({"loso", "lmso"}))
        ->capture_default_str();
    model.attach(cmd);
    pipeline.attach(cmd);
    train_opts.attach(cmd);
    seed.attach(cmd);
    cmd->add_option("--runs", runs, "Training repetitions per fold")->capture_default_str();
    cmd->add_option("--jobs", jobs, "Parallel fold x run workers")->capture_default_str();
    cmd->add_option("--out", out, "Output directory")->capture_default_str();
  }

  ParadigmOptions resolve() const {
    ParadigmOptions opt;
    opt.paradigm = parse_paradigm(paradigm);
    opt.scheme = scheme == "lmso" ? SplitScheme::kLmso10 : SplitScheme::kLoso;
    opt.model = model.resolve(1, 2, 0);  // per-fold fields rewritten by the runner
    opt.train = train_opts.t;
    opt.pipeline = pipeline.resolve();
    opt.n_runs = runs;
    opt.master_seed = seed.resolve();
    opt.jobs = jobs;
    return opt;
  }

  Snapshot snapshot(const ParadigmOptions& opt) const {
    Snapshot kv{{"data", data},
                {"paradigm", paradigm_name(opt.paradigm)},
                {"scheme", scheme}};
    model.snapshot(kv, opt.model);
    pipeline.snapshot(kv);
    train_opts.snapshot(kv);
    kv.emplace_back("seed", std::to_string(opt.master_seed));
    kv.emplace_back("runs", std::to_string(opt.n_runs));
    kv.emplace_back("jobs", std::to_string(opt.jobs));
    kv.emplace_back("out", out);
    return kv;
  }
};

void print_aggregates(const char* label, const Aggregates& g) {
  std::cout << label << ": mean " << fmt_double(g.mean) << "  std(subjects) "
            << fmt_double(g.std_subjects_population) << " population / "
            << fmt_double(g.std_subjects_sample) << " sample  std(runs) "
            << fmt_double(g.std_runs) << "  [" << g.subjects.size() << " subjects, "
            << g.n_trainings << " trainings]\n";
}

struct EvalCmd {
  RunnerOpts runner;

  void attach(CLI::App* cmd) { runner.attach(cmd); }

  int run() {
    require_file(runner.data);
    const TrialArchive a = load_archive(runner.data);
    const ParadigmOptions opt = runner.resolve();

    const EvalReport rep = run_paradigm(a, opt);

    const fs::path dir = prepare_out_dir(runner.out);
    write_report_json(rep, (dir / "report.json").string());
    write_report_csv(rep, (dir / "report.csv").string());
    write_snapshot(dir / "config.txt", "eval", runner.snapshot(opt));

    std::cout << "paradigm " << rep.paradigm << " (" << rep.scheme << "), " << rep.folds.size()
              << " folds x " << rep.n_runs << " runs\n";
    print_aggregates("accuracy", rep.aggregates);
    if (rep.has_late_sessions)
      print_aggregates("accuracy (later sessions)", rep.aggregates_late_sessions);
    std::cout << "wrote " << (dir / "report.json").string() << "\n";
    return 0;
  }
};

struct AblateCmd {
  RunnerOpts runner;
  std::vector<std::string> rows{"full",   "-bn",    "-ea",          "-session",
                                "-zscore", "-mixup", "-subject-reg", "-everything"};

  void attach(CLI::App* cmd) {
    runner.attach(cmd);
    cmd->add_option("--rows", rows,
                    "Ablation rows (also: +eog, online, factorial)")
        ->delimiter(',')
        ->capture_default_str();
  }

  int run() {
    require_file(runner.data);
    const TrialArchive a = load_archive(runner.data);
    const ParadigmOptions opt = runner.resolve();

    const AblationTable table = run_ablation(a, opt, rows);

    const fs::path dir = prepare_out_dir(runner.out);
    {
      std::ofstream os(dir / "ablation.json");
      os << ablation_to_json(table).dump(2) << "\n";
    }
    {
      std::ofstream os(dir / "ablation.csv");
      write_ablation_csv(table, os);
    }
    Snapshot kv = runner.snapshot(opt);
    std::string joined;
    for (const std::string& r : rows) joined += (joined.empty() ? "" : ",") + r;
    kv.emplace_back("rows", joined);
    write_snapshot(dir / "config.txt", "ablate", kv);

    std::cout << "full-pipeline mean " << fmt_double(table.full_mean) << "\n";
    for (const AblationRow& r : table.rows) {
      std::cout << "  " << r.name << ": ";
      if (r.skipped)
        std::cout << "skipped (" << r.skip_reason << ")\n";
      else
        std::cout << "mean " << fmt_double(r.report.aggregates.mean) << "  average gain "
                  << fmt_double(r.average_gain) << "\n";
    }
    std::cout << "wrote " << (dir / "ablation.json").string() << "\n";
    return 0;
  }
};

// ---------------------------------------------------------------------------
// bench

struct BenchCmd {
  ModelOpts model;
  int channels = 22;
  int classes = 4;
  int trials = 576;
  int repeats = 10;
  int warmup = 50;
  double duration_s = 3.0;
  std::vector<std::string> sweep;
  SeedOpt seed;
  std::string out = ".";

  void attach(CLI::App* cmd) {
    model.attach(cmd);
    cmd->add_option("--channels", channels, "Model input channels")->capture_default_str();
    cmd->add_option("--classes", classes, "Number of classes")->capture_default_str();
    cmd->add_option("--trials", trials, "Distinct single-trial inputs")->capture_default_str();
    cmd->add_option("--repeats", repeats, "Timed passes over the trial set")
        ->capture_default_str();
    cmd->add_option("--warmup", warmup, "Untimed warmup passes")->capture_default_str();
    cmd->add_option("--duration", duration_s, "Synthetic trial duration (s)")
        ->capture_default_str();
    cmd->add_option("--sweep", sweep, "Extra W:K size sweep, e.g. 52:1,104:4")
        ->delimiter(',');
    seed.attach(cmd);
    cmd->add_option("--out", out, "Output directory")->capture_default_str();
  }

  int run() {
    const std::uint64_t s = seed.resolve();
    const ModelConfig mc = model.resolve(channels, classes, 0);
    const int T = static_cast<int>(mc.resample_hz * duration_s);
    Model<float> m = build_model<float>(mc, s);

    Rng rng(derive_seed(s, 0xbe9cu));
    Tensor<float> x({trials, mc.in_channels, T});
    for (float& v : x.data) v = static_cast<float>(rng.normal());

    const LatencyReport rep = measure_latency(m, x, repeats, warmup, "preset=" + model.preset);

    const fs::path dir = prepare_out_dir(out);
    {
      std::ofstream os(dir / "latency.json");
      os << latency_to_json(rep).dump(2) << "\n";
    }

    std::cout << rep.n_passes << " timed passes (" << rep.warmup_passes << " warmup), "
              << rep.param_count << " params: mean " << fmt_double(rep.mean_s * 1e3)
              << " ms  median " << fmt_double(rep.median_s * 1e3) << " ms  p95 "
              << fmt_double(rep.p95_s * 1e3) << " ms\n";

    if (!sweep.empty()) {
      std::vector<ModelConfig> configs;
      for (const std::string& pair : sweep) {
        const auto colon = pair.find(':');
        if (colon == std::string::npos)
          throw std::invalid_argument("--sweep entries must look like W:K, got: " + pair);
        ModelConfig c = mc;
        c.width_W = std::stoi(pair.substr(0, colon));
        c.depth_K = std::stoi(pair.substr(colon + 1));
        configs.push_back(c);
      }
      const std::vector<SweepRow> rows = size_latency_sweep(configs, x);
      std::ofstream os(dir / "sweep.csv");
      write_sweep_csv(rows, os);
      for (const SweepRow& r : rows)
        std::cout << "  W=" << r.width_W << " K=" << r.depth_K << ": " << r.params
                  << " params, mean " << fmt_double(r.mean_latency_s * 1e3) << " ms\n";
    }

    Snapshot kv;
    model.snapshot(kv, mc);
    kv.emplace_back("channels", std::to_string(channels));
    kv.emplace_back("classes", std::to_string(classes));
    kv.emplace_back("trials", std::to_string(trials));
    kv.emplace_back("repeats", std::to_string(repeats));
    kv.emplace_back("warmup", std::to_string(warmup));
    kv.emplace_back("duration", fmt_double(duration_s));
    if (!sweep.empty()) {
      std::string joined;
      for (const std::string& p : sweep) joined += (joined.empty() ? "" : ",") + p;
      kv.emplace_back("sweep", joined);
    }
    kv.emplace_back("seed", std::to_string(s));
    kv.emplace_back("out", out);
    write_snapshot(dir / "config.txt", "bench", kv);
    std::cout << "wrote " << (dir / "latency.json").string() << "\n";
    return 0;
  }
};

// ---------------------------------------------------------------------------
// embed: export pre-head features for external (e.g. TSNE) visualization.

struct EmbedCmd {
  std::string data;
  std::string model_path;
  PipelineOpts pipeline;
  std::string out = ".";

  void attach(CLI::App* cmd) {
    cmd->add_option("--data", data, "ESC1 archive")->required();
    cmd->add_option("--model", model_path, "ESCM checkpoint")->required();
    pipeline.attach(cmd);
    cmd->add_option("--out", out, "Output directory")->capture_default_str();
  }

  int run() {
    require_file(data);
    require_file(model_path);
    const TrialArchive a = load_archive(data);
    a.validate();
    Model<float> m = load_model<float>(model_path);
    const PipelineConfig p = pipeline.resolve();

    // Mirror offline evaluation: group by statistics scope, normalize each
    // scope on itself, optionally adapt BN statistics, then read the
    // post-average features from an Eval pass.
    std::map<std::string, std::vector<int>> scopes;
    for (int i = 0; i < a.n_trials(); ++i)
      scopes[scope_key_of(a.subject_ids[static_cast<std::size_t>(i)],
                          a.session_ids[static_cast<std::size_t>(i)], p.stats_scope)]
          .push_back(i);

    std::vector<std::vector<float>> features(static_cast<std::size_t>(a.n_trials()));
    int feature_dim = 0;
    for (const auto& [key, idxs] : scopes) {
      ProcessedGroup g = process_group(a, idxs, p, m.config.resample_hz, /*causal=*/false,
                                       nullptr, AccessPhase::kPrediction);
      const Tensor<float> xb = detail::to_batch<float>(g.trials, m.config.in_channels);
      Model<float> local = m;
      if (p.use_bn_trick && xb.dim(0) >= 2) local = recompute_bn_stats(m, xb);
      const Tensor<float> emb = extract_embeddings(local, xb);
      feature_dim = emb.dim(1);
      for (std::size_t i = 0; i < idxs.size(); ++i) {
        std::vector<float>& row = features[static_cast<std::size_t>(idxs[i])];
        row.resize(static_cast<std::size_t>(feature_dim));
        for (int d = 0; d < feature_dim; ++d) row[static_cast<std::size_t>(d)] =
            emb(static_cast<int>(i), d);
      }
    }

    const fs::path dir = prepare_out_dir(out);
    {
      std::ofstream os(dir / "embeddings.csv");
      os << "trial,label,subject,session";
      for (int d = 0; d < feature_dim; ++d) os << ",f" << d;
      os << "\n";
      for (int i = 0; i < a.n_trials(); ++i) {
        const auto u = static_cast<std::size_t>(i);
        os << i << ',' << a.labels[u] << ',' << a.subject_ids[u] << ',' << a.session_ids[u];
        for (const float v : features[u]) os << ',' << fmt_double(v);
        os << "\n";
      }
    }

    Snapshot kv{{"data", data}, {"model", model_path}};
    pipeline.snapshot(kv);
    kv.emplace_back("out", out);
    write_snapshot(dir / "config.txt", "embed", kv);

    std::cout << "wrote " << (dir / "embeddings.csv").string() << " (" << a.n_trials()
              << " trials x " << feature_dim << " features)\n";
    return 0;
  }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"simpleconv: compact convolutional EEG decoding experiments"};
  app.require_subcommand(1);
  app.footer(
      "Any invocation accepts --config <file>: a flat key=value snapshot\n"
      "(as written next to every command's outputs) replayed as defaults;\n"
      "explicit flags override snapshot values.");

  SynthCmd synth;
  ParamsCmd params;
  TrainCmd train_cmd;
  EvalCmd eval_cmd;
  AblateCmd ablate;
  BenchCmd bench;
  EmbedCmd embed;

  synth.attach(app.add_subcommand("synth", "Generate a deterministic synthetic ESC1 archive"));
  params.attach(app.add_subcommand("params", "Print the learnable-parameter count"));
  train_cmd.attach(app.add_subcommand("train", "Train one model on a whole archive"));
  eval_cmd.attach(app.add_subcommand("eval", "Run a full evaluation paradigm"));
  ablate.attach(app.add_subcommand("ablate", "Run the ablation table"));
  bench.attach(app.add_subcommand("bench", "Time single-trial inference"));
  embed.attach(app.add_subcommand("embed", "Export pre-head feature embeddings"));

  std::vector<std::string> raw(argv + 1, argv + argc);
  std::vector<std::string> expanded;
  try {
    expanded = expand_config(raw);
  } catch (const MissingFileError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitMissingFile;
  } catch (const std::exception& e) {
    std::cerr << "error: invalid config: " << e.what() << "\n";
    return kExitBadConfig;
  }

  // CLI11 wants argv in reverse order for the vector overload.
  std::vector<std::string> reversed(expanded.rbegin(), expanded.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);  // prints the message
    return kExitUsage;
  }

  try {
    if (app.got_subcommand("synth")) return synth.run();
    if (app.got_subcommand("params")) return params.run();
    if (app.got_subcommand("train")) return train_cmd.run();
    if (app.got_subcommand("eval")) return eval_cmd.run();
    if (app.got_subcommand("ablate")) return ablate.run();
    if (app.got_subcommand("bench")) return bench.run();
    if (app.got_subcommand("embed")) return embed.run();
  } catch (const MissingFileError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitMissingFile;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: invalid config: " << e.what() << "\n";
    return kExitBadConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitUsage;
}
