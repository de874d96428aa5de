// Training loop: schedule, mixup, auxiliary subject loss, determinism,
// fine-tuning semantics, and a small overfitting run on clean synthetic data.

#include <catch2/catch_amalgamated.hpp>
#include <cmath>
#include <map>
#include <sstream>
#include <vector>

#include "simpleconv/model.hpp"
#include "simpleconv/rng.hpp"
#include "simpleconv/synth.hpp"
#include "simpleconv/train.hpp"
#include "testutil.hpp"

using namespace simpleconv;

namespace {

ModelConfig micro_config(int n_subjects = 0) {
  ModelConfig c;
  c.width_W = 4;
  c.depth_K = 1;
  c.kernel_S = 3;
  c.in_channels = 2;
  c.n_classes = 2;
  c.n_subjects = n_subjects;
  c.resample_hz = 70.0f;
  return c;
}

// Tiny two-class set: class k rides a constant offset on channel k.
TrainSet<float> micro_set(int n_trials, int t_len, int n_subjects, std::uint64_t seed) {
  TrainSet<float> s;
  s.x = Tensor<float>({n_trials, 2, t_len});
  s.n_classes = 2;
  s.n_subjects = n_subjects;
  Rng rng(seed);
  for (int i = 0; i < n_trials; ++i) {
    const int label = i % 2;
    s.labels.push_back(label);
    if (n_subjects > 0) s.subjects.push_back(i % n_subjects);
    for (int c = 0; c < 2; ++c)
      for (int t = 0; t < t_len; ++t)
        s.x(i, c, t) = static_cast<float>(0.2 * rng.normal() + (c == label ? 1.0 : -1.0));
  }
  return s;
}

TrainSet<float> archive_to_set(const TrialArchive& a) {
  TrainSet<float> s;
  const int n = a.n_trials();
  s.x = Tensor<float>({n, a.n_channels, a.n_samples});
  std::map<int, int> remap;
  for (const auto sid : a.subject_ids) remap.emplace(static_cast<int>(sid), 0);
  int next = 0;
  for (auto& [id, slot] : remap) slot = next++;
  for (int i = 0; i < n; ++i) {
    const float* src = a.trial_ptr(i);
    std::copy(src, src + static_cast<std::size_t>(a.n_channels) * a.n_samples, &s.x(i, 0, 0));
    s.labels.push_back(static_cast<int>(a.labels[static_cast<std::size_t>(i)]));
    s.subjects.push_back(remap.at(static_cast<int>(a.subject_ids[static_cast<std::size_t>(i)])));
  }
  s.n_classes = a.n_classes();
  s.n_subjects = next;
  return s;
}

std::string model_bytes(const Model<float>& m) {
  std::ostringstream os(std::ios::binary);
  save_model(m, os);
  return os.str();
}

}  // namespace

TEST_CASE("TrainConfig validation rejects bad settings") {
  TrainConfig ok;
  REQUIRE_NOTHROW(ok.validate());

  auto expect_bad = [](auto mutate) {
    TrainConfig c;
    mutate(c);
    REQUIRE_THROWS_AS(c.validate(), std::invalid_argument);
  };
  expect_bad([](TrainConfig& c) { c.decay_epoch = c.epochs + 1; });
  expect_bad([](TrainConfig& c) { c.decay_epoch = -1; });
  expect_bad([](TrainConfig& c) { c.decay_factor = 0.0; });
  expect_bad([](TrainConfig& c) { c.decay_factor = 1.5; });
  expect_bad([](TrainConfig& c) { c.base_lr = 0.0; });
  expect_bad([](TrainConfig& c) { c.batch_size = 0; });
  expect_bad([](TrainConfig& c) { c.mixup_alpha = -0.1; });
  expect_bad([](TrainConfig& c) { c.subject_loss_weight = -1.0; });
  expect_bad([](TrainConfig& c) { c.finetune_epochs = -1; });
}

TEST_CASE("learning rate decays exactly once at the configured epoch") {
  auto model = build_model<float>(micro_config(), 1);
  auto data = micro_set(8, 8, 0, 11);
  TrainConfig cfg;  // defaults: 50 epochs, decay at 40, factor 0.1
  cfg.batch_size = 8;
  cfg.seed = 3;

  const TrainHistory hist = train(model, data, cfg);
  REQUIRE(hist.size() == 50);
  CHECK(hist[39].lr == 1e-3);
  CHECK(hist[40].lr == 1e-4);
  int changes = 0;
  for (std::size_t e = 1; e < hist.size(); ++e) changes += hist[e].lr != hist[e - 1].lr;
  CHECK(changes == 1);
  for (const auto& h : hist) {
    CHECK(std::isfinite(h.task_loss));
    CHECK(h.total_loss == h.task_loss);  // no subject loss configured
    CHECK(h.seconds >= 0.0);
  }
}

TEST_CASE("mixup applies one shared lambda to inputs and both target sets") {
  Rng rng(42);
  const int B = 6;
  Tensor<double> x({B, 2, 3}), y({B, 4}), s({B, 3});
  for (auto& v : x.data) v = rng.normal();
  for (int i = 0; i < B; ++i) {
    y(i, i % 4) = 1.0;
    s(i, i % 3) = 1.0;
  }
  const Tensor<double> x0 = x, y0 = y, s0 = s;

  Rng mix_rng(7);
  std::vector<int> partner;
  const double lambda = mixup_batch(x, y, &s, 0.5, mix_rng, &partner);
  REQUIRE(lambda >= 0.0);
  REQUIRE(lambda <= 1.0);
  REQUIRE(partner.size() == static_cast<std::size_t>(B));

  auto check_convex = [&](const Tensor<double>& now, const Tensor<double>& before) {
    const std::size_t stride = before.data.size() / B;
    for (int i = 0; i < B; ++i)
      for (std::size_t j = 0; j < stride; ++j) {
        const double a = before.data[static_cast<std::size_t>(i) * stride + j];
        const double b =
            before.data[static_cast<std::size_t>(partner[static_cast<std::size_t>(i)]) * stride + j];
        const double want = lambda * a + (1.0 - lambda) * b;
        REQUIRE_THAT(now.data[static_cast<std::size_t>(i) * stride + j],
                     Catch::Matchers::WithinAbs(want, 1e-12));
      }
  };
  check_convex(x, x0);
  check_convex(y, y0);
  check_convex(s, s0);

  // Target rows stay on the simplex.
  for (int i = 0; i < B; ++i) {
    double sum = 0.0;
    for (int k = 0; k < 4; ++k) sum += y(i, k);
    REQUIRE_THAT(sum, Catch::Matchers::WithinAbs(1.0, 1e-12));
  }
}

TEST_CASE("mixup leaves a singleton batch untouched") {
  Tensor<double> x({1, 2, 3}), y({1, 4});
  x.data = {1, 2, 3, 4, 5, 6};
  y(0, 2) = 1.0;
  const Tensor<double> x0 = x, y0 = y;
  Rng rng(1);
  const double lambda = mixup_batch(x, y, static_cast<Tensor<double>*>(nullptr), 0.2, rng);
  CHECK(lambda == 1.0);
  CHECK(x.data == x0.data);
  CHECK(y.data == y0.data);
}

TEST_CASE("disabling mixup and the subject loss reduces training to plain CE") {
  TrainConfig cfg;
  cfg.epochs = 5;
  cfg.decay_epoch = 5;
  cfg.mixup_alpha = 0.0;
  cfg.subject_loss_weight = 0.0;
  cfg.batch_size = 4;
  cfg.seed = 9;

  auto data = micro_set(12, 8, 3, 21);

  // With the weight at zero the auxiliary head must not influence the rest of
  // the network: a model with the head and one without end up with identical
  // trunk and class-head parameters.
  auto with_head = build_model<float>(micro_config(3), 5);
  auto without_head = build_model<float>(micro_config(0), 5);
  auto data_no_subj = data;
  data_no_subj.subjects.clear();
  data_no_subj.n_subjects = 0;

  const auto hist_a = train(with_head, data, cfg);
  const auto hist_b = train(without_head, data_no_subj, cfg);

  for (const auto& h : hist_a) {
    CHECK(h.subject_loss == 0.0);
    CHECK(h.total_loss == h.task_loss);
  }
  for (std::size_t e = 0; e < hist_a.size(); ++e)
    CHECK(hist_a[e].task_loss == hist_b[e].task_loss);
  CHECK(with_head.class_head.w.data == without_head.class_head.w.data);
  CHECK(with_head.embed.w.data == without_head.embed.w.data);
}

TEST_CASE("subject loss is recorded unweighted and folded in as lambda_s * CE") {
  TrainConfig cfg;
  cfg.epochs = 3;
  cfg.decay_epoch = 3;
  cfg.subject_loss_weight = 0.25;
  cfg.batch_size = 6;
  cfg.seed = 4;

  auto model = build_model<float>(micro_config(3), 2);
  auto data = micro_set(12, 8, 3, 33);
  const auto hist = train(model, data, cfg);
  for (const auto& h : hist) {
    CHECK(h.subject_loss > 0.0);
    REQUIRE_THAT(h.total_loss, Catch::Matchers::WithinAbs(h.task_loss + 0.25 * h.subject_loss,
                                                          1e-12));
  }
}

TEST_CASE("training is bitwise deterministic for a fixed seed") {
  const auto data = micro_set(16, 8, 4, 55);
  TrainConfig cfg;
  cfg.epochs = 4;
  cfg.decay_epoch = 3;
  cfg.batch_size = 8;
  cfg.mixup_alpha = 0.2;
  cfg.subject_loss_weight = 0.1;
  cfg.seed = 77;

  auto m1 = build_model<float>(micro_config(4), 123);
  auto m2 = m1;
  const auto h1 = train(m1, data, cfg);
  const auto h2 = train(m2, data, cfg);

  REQUIRE(model_bytes(m1) == model_bytes(m2));
  for (std::size_t e = 0; e < h1.size(); ++e) {
    CHECK(h1[e].task_loss == h2[e].task_loss);
    CHECK(h1[e].subject_loss == h2[e].subject_loss);
    CHECK(h1[e].train_accuracy == h2[e].train_accuracy);
  }

  auto m3 = build_model<float>(micro_config(4), 123);
  TrainConfig other = cfg;
  other.seed = 78;
  train(m3, data, other);
  CHECK(model_bytes(m3) != model_bytes(m1));
}

TEST_CASE("a short run overfits the clean synthetic set") {
  SynthConfig sc;
  sc.n_subjects = 2;
  sc.n_sessions = 1;
  sc.trials_per_session = 32;
  sc.n_channels = 8;
  sc.fs = 70.0;
  sc.duration_s = 1.0;
  sc.n_classes = 4;
  sc.noise_scale = 0.0;
  sc.seed = 7;
  const auto data = archive_to_set(synth_generate(sc));

  ModelConfig mc;
  mc.width_W = 8;
  mc.depth_K = 1;
  mc.kernel_S = 7;
  mc.in_channels = 8;
  mc.n_classes = 4;
  mc.resample_hz = 70.0f;
  auto model = build_model<float>(mc, 1);

  TrainConfig cfg;
  cfg.epochs = 30;
  cfg.decay_epoch = 25;
  cfg.base_lr = 3e-3;
  cfg.batch_size = 16;
  cfg.mixup_alpha = 0.0;
  cfg.subject_loss_weight = 0.0;
  cfg.seed = 5;

  const auto hist = train(model, data, cfg);
  CHECK(hist.back().train_accuracy >= 99.0);
  CHECK(hist.back().task_loss < 0.2);
  CHECK(hist.back().task_loss < hist.front().task_loss);
}

TEST_CASE("finetune continues at the decayed rate with the subject head off") {
  auto model = build_model<float>(micro_config(3), 8);
  auto data = micro_set(12, 8, 3, 99);
  TrainConfig cfg;
  cfg.epochs = 6;
  cfg.decay_epoch = 4;
  cfg.batch_size = 6;
  cfg.seed = 13;
  cfg.finetune_epochs = 5;

  AdamState<float> adam;
  train(model, data, cfg, &adam);
  const std::string before = model_bytes(model);

  // Calibration: the subset belonging to subject 0 only.
  TrainSet<float> calib;
  calib.n_classes = 2;
  calib.n_subjects = 3;
  std::vector<int> keep;
  for (std::size_t i = 0; i < data.subjects.size(); ++i)
    if (data.subjects[i] == 0) keep.push_back(static_cast<int>(i));
  calib.x = Tensor<float>({static_cast<int>(keep.size()), 2, 8});
  for (std::size_t r = 0; r < keep.size(); ++r) {
    const int src = keep[r];
    std::copy(&data.x(src, 0, 0), &data.x(src, 0, 0) + 16, &calib.x(static_cast<int>(r), 0, 0));
    calib.labels.push_back(data.labels[static_cast<std::size_t>(src)]);
    calib.subjects.push_back(0);
  }

  const auto hist = finetune(model, adam, calib, cfg);
  REQUIRE(hist.size() == 5);
  for (const auto& h : hist) {
    CHECK(h.lr == 1e-4);  // base 1e-3 times factor 0.1
    CHECK(h.subject_loss == 0.0);
    CHECK(h.total_loss == h.task_loss);
  }
  CHECK(model_bytes(model) != before);

  SECTION("calibration spanning several subjects is rejected") {
    auto fresh = build_model<float>(micro_config(3), 8);
    AdamState<float> st;
    train(fresh, data, cfg, &st);
    REQUIRE_THROWS_WITH(finetune(fresh, st, data, cfg),
                        Catch::Matchers::ContainsSubstring("one subject"));
  }

  SECTION("empty calibration is rejected") {
    TrainSet<float> empty;
    empty.n_classes = 2;
    AdamState<float> st;
    REQUIRE_THROWS_WITH(finetune(model, st, empty, cfg),
                        Catch::Matchers::ContainsSubstring("empty"));
  }
}

TEST_CASE("finetune with zero epochs leaves the model bitwise unchanged") {
  auto model = build_model<float>(micro_config(2), 3);
  auto data = micro_set(8, 8, 2, 17);
  TrainConfig cfg;
  cfg.epochs = 2;
  cfg.decay_epoch = 1;
  cfg.batch_size = 4;
  cfg.finetune_epochs = 0;

  AdamState<float> adam;
  train(model, data, cfg, &adam);
  const std::string before = model_bytes(model);

  TrainSet<float> calib = data;
  std::fill(calib.subjects.begin(), calib.subjects.end(), 1);
  const auto hist = finetune(model, adam, calib, cfg);
  CHECK(hist.empty());
  CHECK(model_bytes(model) == before);
}

TEST_CASE("train_mdl is the same routine as train") {
  const auto data = micro_set(12, 8, 3, 61);
  TrainConfig cfg;
  cfg.epochs = 3;
  cfg.decay_epoch = 2;
  cfg.batch_size = 6;
  cfg.seed = 29;

  auto m1 = build_model<float>(micro_config(3), 31);
  auto m2 = m1;
  train(m1, data, cfg);
  train_mdl(m2, data, cfg);
  CHECK(model_bytes(m1) == model_bytes(m2));
}

TEST_CASE("train rejects malformed inputs") {
  auto model = build_model<float>(micro_config(2), 1);
  TrainConfig cfg;
  cfg.epochs = 1;
  cfg.decay_epoch = 1;

  TrainSet<float> empty;
  empty.n_classes = 2;
  REQUIRE_THROWS_WITH(train(model, empty, cfg), Catch::Matchers::ContainsSubstring("empty"));

  auto bad_labels = micro_set(4, 8, 2, 1);
  bad_labels.labels.pop_back();
  REQUIRE_THROWS_AS(train(model, bad_labels, cfg), std::invalid_argument);

  auto out_of_range = micro_set(4, 8, 2, 1);
  out_of_range.labels[0] = 7;
  REQUIRE_THROWS_AS(train(model, out_of_range, cfg), std::invalid_argument);

  auto bad_subject = micro_set(4, 8, 2, 1);
  bad_subject.subjects[0] = 5;
  REQUIRE_THROWS_WITH(train(model, bad_subject, cfg),
                      Catch::Matchers::ContainsSubstring("contiguous"));

  auto wrong_classes = micro_set(4, 8, 2, 1);
  wrong_classes.n_classes = 3;
  REQUIRE_THROWS_AS(train(model, wrong_classes, cfg), std::invalid_argument);
}
