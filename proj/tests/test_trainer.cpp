#include <filesystem>
#include <fstream>
#include <sstream>

#include <gtest/gtest.h>

#include "rmit/error.hpp"
#include "rmit/experiment.hpp"
#include "rmit/trainer.hpp"
#include "support/tiny_runs.hpp"

using namespace rmit;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::ostringstream os;
  os << is.rdbuf();
  return os.str();
}

Batch<TrainingAccess> random_batch(std::int64_t b = 8, std::int64_t size = 16) {
  return {torch::rand({b, 3, size, size}) * 2 - 1, torch::randint(0, 3, {b}, torch::kLong)};
}

fs::path fresh_dir(const std::string& name) {
  auto p = fs::temp_directory_path() / name;
  fs::remove_all(p);
  return p;
}

}  // namespace

TEST(TrainConfig, DefaultsFollowStandardSettings) {
  const auto cfg = TrainConfig::desk(Variant::rmit);
  EXPECT_EQ(cfg.weights.lambda_cls, 1.0);
  EXPECT_EQ(cfg.weights.lambda_cyc, 10.0);
  EXPECT_EQ(cfg.lr, 1e-4);
  EXPECT_EQ(cfg.adam_beta1, 0.5);
  EXPECT_EQ(cfg.adam_beta2, 0.999);
  EXPECT_EQ(cfg.d_steps_per_g, 5);
  EXPECT_EQ(cfg.batch_size, 16);
  EXPECT_EQ(cfg.hflip_probability, 0.5);
  EXPECT_EQ(cfg.weights.gp_weight, 10.0);
  EXPECT_EQ(cfg.epochs_flat, cfg.epochs_decay);
  EXPECT_TRUE(TrainConfig::desk(Variant::rmit_adv2).weights.use_adv2);
}

TEST(TrainConfig, JsonRoundTripAndHash) {
  auto cfg = oracle::tiny_config(Variant::rmit_recyc_vcyc, 4,
                                 {{"classifier", {{"method", "coteaching"}, {"drop_rate", 0.3}}},
                                  {"noise", {{"kind", "symmetric"}, {"rate", 0.3}}}});
  const auto back = TrainConfig::from_json(cfg.to_json());
  EXPECT_EQ(back.to_json(), cfg.to_json());
  EXPECT_EQ(back.hash(), cfg.hash());
  EXPECT_EQ(cfg.hash().size(), 16u);
  auto other = cfg;
  other.seed = 5;
  EXPECT_NE(other.hash(), cfg.hash());
}

TEST(TrainConfig, RejectsUnknownKeysAndBadValues) {
  auto j = oracle::tiny_base();
  j["learning_rate"] = 0.1;
  EXPECT_THROW(TrainConfig::from_json(j), InvalidSpec);
  j = oracle::tiny_base();
  j["schedule"]["d_steps_per_g"] = 0;
  EXPECT_THROW(TrainConfig::from_json(j), InvalidSpec);
  j = oracle::tiny_base();
  j["discriminator"]["image_size"] = 32;
  EXPECT_THROW(TrainConfig::from_json(j), InvalidSpec);
  j = oracle::tiny_base();
  j["variant"] = "pix2pix";
  EXPECT_THROW(TrainConfig::from_json(j), InvalidSpec);
}

TEST(Schedule, LinearDecayToZero) {
  auto cfg = TrainConfig::desk(Variant::stargan);
  cfg.epochs_flat = 100;
  cfg.epochs_decay = 100;
  EXPECT_DOUBLE_EQ(lr_at(0, cfg), 1e-4);
  EXPECT_DOUBLE_EQ(lr_at(50, cfg), 1e-4);
  EXPECT_DOUBLE_EQ(lr_at(99, cfg), 1e-4);
  EXPECT_DOUBLE_EQ(lr_at(150, cfg), 5e-5);
  EXPECT_DOUBLE_EQ(lr_at(199, cfg), 1e-6);
  EXPECT_THROW(lr_at(200, cfg), InvalidInput);
  EXPECT_THROW(lr_at(-1, cfg), InvalidInput);
}

TEST(TrainStep, OneGeneratorUpdatePerFiveCriticSteps) {
  auto state = TrainState::create(oracle::tiny_config(Variant::stargan));
  int updates = 0;
  for (int i = 1; i <= 5; ++i) {
    const auto r = train_step(state, random_batch());
    updates += r.generator_updated;
    EXPECT_EQ(r.generator_updated, i == 5);
  }
  EXPECT_EQ(updates, 1);
  EXPECT_EQ(state.d_steps, 5);
  EXPECT_EQ(state.g_steps, 1);
}

TEST(TrainStep, GeneratorUntouchedDuringCriticSteps) {
  auto state = TrainState::create(oracle::tiny_config(Variant::rmit));
  const auto g0 = state.generator->parameters()[0].clone();
  const auto d0 = state.discriminator->parameters()[0].clone();
  train_step(state, random_batch());
  EXPECT_TRUE(torch::equal(g0, state.generator->parameters()[0]));
  EXPECT_FALSE(torch::equal(d0, state.discriminator->parameters()[0]));
}

TEST(TrainStep, BundleKeysFollowVariant) {
  struct Case {
    Variant v;
    nlohmann::json extra;
    std::vector<std::string> d_keys, g_keys;
  };
  const std::vector<Case> cases = {
      {Variant::stargan, {}, {"adv_d", "gp", "cls_r", "total_d"}, {"adv_g", "cls_f", "cyc", "total_g"}},
      {Variant::rmit, {}, {"adv_d", "gp", "cls_r", "total_d"}, {"adv_g", "cls_f", "vcyc", "total_g"}},
      {Variant::rmit_cyc_vcyc, {}, {"total_d"}, {"cyc", "vcyc", "mixed", "total_g"}},
      {Variant::rmit_adv2, {}, {"adv2_d", "total_d2"}, {"vcyc", "adv2_g", "total_g"}},
      {Variant::rmit_recyc_vcyc,
       {{"classifier", {{"method", "coteaching"}, {"drop_rate", 0.5}}}},
       {"cls_r_peer_b", "coteach_selected"},
       {"recyc", "vcyc", "mixed"}},
  };
  for (const auto& c : cases) {
    auto state = TrainState::create(oracle::tiny_config(c.v, 1, c.extra));
    StepResult last;
    for (int i = 0; i < 5; ++i) last = train_step(state, random_batch());
    for (const auto& k : c.d_keys) EXPECT_TRUE(last.losses.get(k).has_value()) << to_string(c.v) << " " << k;
    for (const auto& k : c.g_keys) EXPECT_TRUE(last.losses.get(k).has_value()) << to_string(c.v) << " " << k;
    EXPECT_TRUE(last.losses.all_finite());
  }
}

TEST(TrainStep, CoteachingSelectsComplementOfDropRate) {
  auto state = TrainState::create(
      oracle::tiny_config(Variant::rmit, 1, {{"classifier", {{"method", "coteaching"}, {"drop_rate", 0.25}}}}));
  const auto r = train_step(state, random_batch());
  EXPECT_DOUBLE_EQ(r.losses.get("coteach_selected").value(), 0.75);
}

TEST(TrainStep, NonFiniteLossStopsBeforeUpdate) {
  auto state = TrainState::create(oracle::tiny_config(Variant::stargan));
  auto batch = random_batch();
  batch.images[0][0][0][0] = std::nanf("");
  const auto d0 = state.discriminator->parameters()[0].clone();
  try {
    train_step(state, batch);
    FAIL() << "expected NumericalError";
  } catch (const NumericalError& e) {
    EXPECT_NE(std::string(e.what()).find("non-finite"), std::string::npos);
  }
  EXPECT_TRUE(torch::equal(d0, state.discriminator->parameters()[0]));
}

TEST(TrainStep, RequiresInitializedState) {
  TrainState empty;
  EXPECT_THROW(train_step(empty, random_batch()), LifecycleError);
}

TEST(Trajectory, StepsIncreasePerSeries) {
  ScoreTrajectory t;
  t.add(10, 1, "CA", 30);
  t.add(10, 1, "FID", 100);
  t.add(20, 2, "CA", 40);
  EXPECT_THROW(t.add(20, 2, "CA", 45), InvalidInput);
  EXPECT_EQ(t.series("CA").size(), 2u);
  const auto back = ScoreTrajectory::from_json(t.to_json());
  EXPECT_EQ(back.points().size(), 3u);
  EXPECT_EQ(back.series("FID")[0].value, 100);
}

TEST(RunTraining, WritesLogsAndReports) {
  const auto cfg = oracle::tiny_config(Variant::rmit);
  const auto data = build_training_data(oracle::tiny_dataset(), cfg);
  const auto dir = fresh_dir("rmit_test_run_logs");
  const auto r = run_training(cfg, data, {dir, false, std::nullopt});
  EXPECT_EQ(r.epochs_completed, 4);
  ASSERT_EQ(r.reports.size(), 2u);
  EXPECT_EQ(r.reports.back().epoch, 4);
  EXPECT_GE(r.reports.back().ca, 0.0);
  EXPECT_LE(r.reports.back().ca, 100.0);
  // 36 training images, batch 8: 4 steps per epoch.
  EXPECT_EQ(r.d_steps, 16);
  EXPECT_EQ(r.g_steps, 3);
  EXPECT_EQ(r.trajectory.series("classifier_test_accuracy").size(), 4u);
  for (const char* f : {"checkpoint.rmit", "train_log.jsonl", "metrics.jsonl", "trajectory.jsonl"}) {
    EXPECT_TRUE(fs::exists(dir / f)) << f;
  }
  fs::remove_all(dir);
}

TEST(RunTraining, ResumeEqualsUninterrupted) {
  const auto cfg = oracle::tiny_config(Variant::rmit_recyc_vcyc, 2,
                                       {{"classifier", {{"method", "coteaching"}}},
                                        {"noise", {{"kind", "symmetric"}, {"rate", 0.5}}}});
  const auto data = build_training_data(oracle::tiny_dataset(), cfg);
  const auto full = fresh_dir("rmit_test_full");
  const auto split = fresh_dir("rmit_test_split");
  run_training(cfg, data, {full, false, std::nullopt});
  const auto partial = run_training(cfg, data, {split, false, 2});
  EXPECT_EQ(partial.epochs_completed, 2);
  run_training(cfg, data, {split, true, std::nullopt});
  for (const char* f : {"checkpoint.rmit", "train_log.jsonl", "metrics.jsonl", "trajectory.jsonl"}) {
    EXPECT_EQ(slurp(full / f), slurp(split / f)) << f;
  }
  fs::remove_all(full);
  fs::remove_all(split);
}

TEST(RunTraining, ResumeRejectsDifferentConfig) {
  const auto cfg = oracle::tiny_config(Variant::stargan);
  const auto data = build_training_data(oracle::tiny_dataset(), cfg);
  const auto dir = fresh_dir("rmit_test_resume_mismatch");
  run_training(cfg, data, {dir, false, 2});
  auto other = cfg;
  other.seed = 9;
  EXPECT_THROW(run_training(other, data, {dir, true, std::nullopt}), InvalidSpec);
  fs::remove_all(dir);
}

TEST(Checkpoint, ArchiveRoundTrip) {
  CheckpointArchive a;
  a.manifest()["epoch"] = 3;
  a.add("w", torch::arange(6, torch::kFloat).view({2, 3}));
  a.add("n", torch::tensor({1, 2}, torch::kLong));
  EXPECT_THROW(a.add("w", torch::zeros({1})), InvalidInput);
  const auto bytes = a.serialize();
  const auto b = CheckpointArchive::deserialize(bytes);
  EXPECT_EQ(b.manifest()["epoch"], 3);
  EXPECT_TRUE(torch::equal(b.get("w"), a.get("w")));
  EXPECT_TRUE(torch::equal(b.get("n"), a.get("n")));
  EXPECT_EQ(b.serialize(), bytes);
  EXPECT_THROW(CheckpointArchive::deserialize(bytes.substr(0, bytes.size() - 3)), InvalidInput);
}
