// Subprocess smoke tests for the command-line front end: exit-code contract,
// artifact layout, snapshot replay, and determinism of the synthetic
// generator through the binary.

#include <catch2/catch_amalgamated.hpp>

#include <sys/wait.h>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

namespace fs = std::filesystem;

namespace {

struct CmdResult {
  int exit_code = -1;
  std::string out;
};

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

/// Runs the CLI binary with stdout+stderr captured to a file; returns the
/// process exit code and the combined output.
CmdResult run_cli(const fs::path& dir, const std::string& args,
                  const std::string& env_prefix = "") {
  const fs::path capture = dir / "capture.txt";
  const std::string cmd = env_prefix + std::string(SIMPLECONV_CLI_PATH) + " " + args + " > " +
                          capture.string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  CmdResult r;
  if (WIFEXITED(status)) r.exit_code = WEXITSTATUS(status);
  r.out = slurp(capture);
  return r;
}

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() /
           ("simpleconv_cli_" + std::to_string(::getpid()) + "_" +
            std::to_string(counter()++));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  static int& counter() {
    static int c = 0;
    return c;
  }
};

const std::string kTinySynthNoSeed =
    "synth --subjects 3 --sessions 2 --trials 6 --channels 4 --classes 2 "
    "--fs 32 --duration 1.0";
const std::string kTinySynth = kTinySynthNoSeed + " --seed 5";

const std::string kTinyModel = "--preset within --W 4 --S 5 --resample-hz 24";

int count_lines(const std::string& s) {
  int n = 0;
  for (const char c : s)
    if (c == '\n') ++n;
  return n;
}

}  // namespace

TEST_CASE("params prints a positive integer and exits 0") {
  TempDir tmp;
  const CmdResult r = run_cli(tmp.path, "params --preset within");
  REQUIRE(r.exit_code == 0);
  REQUIRE(std::stol(r.out) > 0);

  // Explicit flags override the preset: a wider model has more parameters.
  const CmdResult wider = run_cli(tmp.path, "params --preset within --W 208");
  REQUIRE(std::stol(wider.out) > std::stol(r.out));
}

TEST_CASE("synth is deterministic through the binary") {
  TempDir tmp;
  const CmdResult a =
      run_cli(tmp.path, kTinySynth + " --out " + (tmp.path / "a").string());
  const CmdResult b =
      run_cli(tmp.path, kTinySynth + " --out " + (tmp.path / "b").string());
  REQUIRE(a.exit_code == 0);
  REQUIRE(b.exit_code == 0);
  const std::string bytes_a = slurp(tmp.path / "a" / "synth.esc1");
  REQUIRE(!bytes_a.empty());
  REQUIRE(bytes_a == slurp(tmp.path / "b" / "synth.esc1"));
  REQUIRE(fs::exists(tmp.path / "a" / "synth.esc1.manifest"));
  REQUIRE(fs::exists(tmp.path / "a" / "config.txt"));

  // A different seed changes the bytes.
  const CmdResult c = run_cli(
      tmp.path, kTinySynthNoSeed + " --seed 6 --out " + (tmp.path / "c").string());
  REQUIRE(c.exit_code == 0);
  REQUIRE(bytes_a != slurp(tmp.path / "c" / "synth.esc1"));
}

TEST_CASE("SIMPLECONV_SEED is the master-seed fallback") {
  TempDir tmp;
  const std::string out = (tmp.path / "s").string();
  const CmdResult r =
      run_cli(tmp.path, kTinySynthNoSeed + " --out " + out, "SIMPLECONV_SEED=77 ");
  REQUIRE(r.exit_code == 0);
  REQUIRE(slurp(tmp.path / "s" / "config.txt").find("seed=77") != std::string::npos);

  // An explicit --seed wins over the environment.
  const CmdResult e = run_cli(tmp.path, kTinySynth + " --out " + (tmp.path / "e").string(),
                              "SIMPLECONV_SEED=77 ");
  REQUIRE(e.exit_code == 0);
  REQUIRE(slurp(tmp.path / "e" / "config.txt").find("seed=5") != std::string::npos);
}

TEST_CASE("error classes map to distinct nonzero exit codes") {
  TempDir tmp;
  SECTION("unknown flag") {
    REQUIRE(run_cli(tmp.path, "eval --definitely-not-a-flag").exit_code == 2);
  }
  SECTION("missing data file") {
    const CmdResult r =
        run_cli(tmp.path, "eval --data " + (tmp.path / "nope.esc1").string());
    REQUIRE(r.exit_code == 3);
    REQUIRE(r.out.find("missing file") != std::string::npos);
  }
  SECTION("invalid configuration") {
    // 4 classes put the highest class tone above Nyquist at 10 Hz.
    const CmdResult r = run_cli(
        tmp.path, "synth --classes 4 --fs 10 --out " + (tmp.path / "x").string());
    REQUIRE(r.exit_code == 4);
    REQUIRE(r.out.find("invalid config") != std::string::npos);
  }
  SECTION("errors are one-line machine-parsable messages") {
    const CmdResult r =
        run_cli(tmp.path, "eval --data " + (tmp.path / "nope.esc1").string());
    REQUIRE(count_lines(r.out) == 1);
    REQUIRE(r.out.rfind("error: ", 0) == 0);
  }
}

TEST_CASE("eval writes report artifacts and a replayable snapshot") {
  TempDir tmp;
  REQUIRE(run_cli(tmp.path, kTinySynth + " --out " + tmp.path.string()).exit_code == 0);
  const std::string data = (tmp.path / "synth.esc1").string();

  const std::string eval_args = "eval --data " + data + " --paradigm within " + kTinyModel +
                                " --epochs 2 --decay-epoch 2 --batch-size 8 --runs 1 --seed 9";
  const CmdResult r = run_cli(tmp.path, eval_args + " --out " + (tmp.path / "e1").string());
  INFO(r.out);
  REQUIRE(r.exit_code == 0);

  const nlohmann::json rep = nlohmann::json::parse(slurp(tmp.path / "e1" / "report.json"));
  REQUIRE(rep.at("paradigm") == "within");
  REQUIRE(rep.at("folds").size() == 3);
  REQUIRE(rep.at("aggregates").at("subjects").size() == 3);
  REQUIRE(fs::exists(tmp.path / "e1" / "report.csv"));

  // Replaying the snapshot (explicit --out overrides the recorded one)
  // reproduces the per-trial accuracy table bitwise.
  const CmdResult replay =
      run_cli(tmp.path, "--config " + (tmp.path / "e1" / "config.txt").string() + " --out " +
                            (tmp.path / "e2").string());
  INFO(replay.out);
  REQUIRE(replay.exit_code == 0);
  REQUIRE(slurp(tmp.path / "e1" / "report.csv") == slurp(tmp.path / "e2" / "report.csv"));

  // A snapshot names its command; replaying it under a different one fails.
  const CmdResult clash = run_cli(
      tmp.path, "bench --config " + (tmp.path / "e1" / "config.txt").string());
  REQUIRE(clash.exit_code == 4);

  // Command-line flags override snapshot values.
  const CmdResult overridden =
      run_cli(tmp.path, "--config " + (tmp.path / "e1" / "config.txt").string() + " --seed 10" +
                            " --out " + (tmp.path / "e3").string());
  REQUIRE(overridden.exit_code == 0);
  REQUIRE(slurp(tmp.path / "e3" / "config.txt").find("seed=10") != std::string::npos);
}

TEST_CASE("train then embed produce a checkpoint and a feature matrix") {
  TempDir tmp;
  REQUIRE(run_cli(tmp.path, kTinySynth + " --out " + tmp.path.string()).exit_code == 0);
  const std::string data = (tmp.path / "synth.esc1").string();

  const CmdResult t = run_cli(tmp.path, "train --data " + data + " " + kTinyModel +
                                            " --epochs 2 --decay-epoch 2 --batch-size 8 "
                                            "--seed 3 --out " +
                                            (tmp.path / "t").string());
  INFO(t.out);
  REQUIRE(t.exit_code == 0);
  REQUIRE(fs::exists(tmp.path / "t" / "model.escm"));
  // history: header + one line per epoch
  REQUIRE(count_lines(slurp(tmp.path / "t" / "train_history.csv")) == 3);

  const CmdResult e = run_cli(tmp.path, "embed --data " + data + " --model " +
                                            (tmp.path / "t" / "model.escm").string() +
                                            " --out " + (tmp.path / "em").string());
  INFO(e.out);
  REQUIRE(e.exit_code == 0);
  const std::string csv = slurp(tmp.path / "em" / "embeddings.csv");
  REQUIRE(count_lines(csv) == 36 + 1);  // 3 subjects x 2 sessions x 6 trials + header
  REQUIRE(csv.rfind("trial,label,subject,session,f0", 0) == 0);
}

TEST_CASE("bench writes a latency report with the requested pass count") {
  TempDir tmp;
  const CmdResult r = run_cli(
      tmp.path,
      "bench --W 2 --K 1 --S 3 --channels 4 --classes 2 --resample-hz 24 --trials 8 "
      "--repeats 2 --warmup 1 --duration 1.0 --sweep 2:1,4:1 --out " +
          (tmp.path / "b").string());
  INFO(r.out);
  REQUIRE(r.exit_code == 0);
  const nlohmann::json lat = nlohmann::json::parse(slurp(tmp.path / "b" / "latency.json"));
  REQUIRE(lat.at("n_passes") == 16);
  REQUIRE(lat.at("param_count").get<long>() > 0);
  const std::string sweep = slurp(tmp.path / "b" / "sweep.csv");
  REQUIRE(sweep.rfind("W,K,params,mean_latency_s", 0) == 0);
  REQUIRE(count_lines(sweep) == 3);
}
