#include <gtest/gtest.h>

#include <cmath>
#include <fstream>

#include "lbam/checkpoint.hpp"
#include "lbam/error.hpp"
#include "lbam/masks.hpp"
#include "lbam/ops.hpp"
#include "lbam/training.hpp"
#include "test_util.hpp"

using namespace lbam;
using lbam::testing::fixture_dir;
using lbam::testing::hash_tensors;
using lbam::testing::TempDir;

namespace {

TrainConfig small_config() {
  TrainConfig c;
  c.image_size = 128;
  c.min_side = 175;
  c.batch_size = 2;
  c.epochs = 2;
  c.checkpoint_every = 1000;
  c.seed = 5;
  return c;
}

DatasetManifest four_images() {
  DatasetManifest m = DatasetManifest::from_directory(fixture_dir() / "images");
  m.files.resize(4);
  return m;
}

bool all_finite(const StepMetrics& m) {
  for (double v : {m.total, m.l1, m.adv, m.perc, m.style, m.critic_loss, m.d_real, m.d_fake, m.gp,
                   m.grad_norm_generator, m.grad_norm_critic}) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

}  // namespace

TEST(TrainConfig, DefaultsRoundTripAndOverrides) {
  const TrainConfig d;
  EXPECT_EQ(d.lr, 1e-4);
  EXPECT_EQ(d.beta1, 0.5);
  EXPECT_EQ(d.beta2, 0.999);
  EXPECT_EQ(d.critic_steps, 1);
  EXPECT_EQ(d.clip_norm, 1.0);
  EXPECT_EQ(to_json(train_config_from_json(to_json(d))), to_json(d));

  nlohmann::json j = nlohmann::json::object();
  apply_override(j, "weights.adv=0");
  apply_override(j, "generator.attention=unlearned");
  apply_override(j, "mask_dir=/data/masks");
  apply_override(j, "augment=false");
  const TrainConfig c = train_config_from_json(j);
  EXPECT_EQ(c.weights.adv, 0.0);
  EXPECT_EQ(c.weights.style, 120.0);
  EXPECT_EQ(c.generator.attention, AttentionKind::unlearned);
  EXPECT_EQ(c.mask_dir, "/data/masks");
  EXPECT_FALSE(c.augment);
  EXPECT_THROW(apply_override(j, "noequals"), ConfigError);
  EXPECT_THROW(apply_override(j, "a..b=1"), ConfigError);
}

TEST(TrainConfig, RejectsUnknownAndInvalid) {
  EXPECT_THROW(train_config_from_json({{"learning_rate", 1}}), ConfigError);
  EXPECT_THROW(train_config_from_json({{"weights", {{"l2", 1}}}}), ConfigError);
  EXPECT_THROW(train_config_from_json({{"epochs", "many"}}), ConfigError);
  EXPECT_THROW(train_config_from_json(nlohmann::json::array()), ConfigError);
  TrainConfig c;
  c.batch_size = 0;
  EXPECT_THROW(validate(c), ConfigError);
  c = TrainConfig{};
  c.image_size = 200;
  EXPECT_THROW(validate(c), ConfigError);
  c = TrainConfig{};
  c.critic_head = "softmax";
  EXPECT_THROW(validate(c), ConfigError);
  c = TrainConfig{};
  c.weights = {0, 0, 0, 0, 10};
  EXPECT_THROW(validate(c), ConfigError);
}

TEST(TrainConfig, LoadFromFile) {
  TempDir dir;
  std::ofstream(dir / "c.json") << R"({"epochs": 7, "weights": {"perc": 0.5}})";
  const TrainConfig c = load_train_config(dir / "c.json", {"seed=9"});
  EXPECT_EQ(c.epochs, 7);
  EXPECT_EQ(c.weights.perc, 0.5);
  EXPECT_EQ(c.weights.l1, 1.0);
  EXPECT_EQ(c.seed, 9u);
  std::ofstream(dir / "bad.json") << "{ nope";
  EXPECT_THROW(load_train_config(dir / "bad.json"), ConfigError);
  EXPECT_THROW(load_train_config(dir / "none.json"), IoError);
  EXPECT_EQ(load_train_config({}, {"epochs=3"}).epochs, 3);
}

TEST(Batching, OrderAndSamplesAreSeeded) {
  TrainConfig c = small_config();
  const auto o1 = epoch_order(8, c, 1), o2 = epoch_order(8, c, 2);
  EXPECT_EQ(o1, epoch_order(8, c, 1));
  EXPECT_NE(o1, o2);
  std::vector<size_t> sorted = o1;
  std::sort(sorted.begin(), sorted.end());
  EXPECT_EQ(sorted, (std::vector<size_t>{0, 1, 2, 3, 4, 5, 6, 7}));
  c.shuffle = false;
  EXPECT_EQ(epoch_order(3, c, 4), (std::vector<size_t>{0, 1, 2}));

  const DatasetManifest m = four_images();
  const Batch a = make_batch(m, c, 1, {0, 2});
  EXPECT_EQ(a.images.shape(), (Shape{2, 3, 128, 128}));
  EXPECT_EQ(a.masks.shape(), (Shape{2, 1, 128, 128}));
  EXPECT_EQ(ops::max_abs_diff(a.masks, make_batch(m, c, 1, {0, 2}).masks), 0.0f);
  for (int64_t i = 0; i < 2; ++i) {
    const Tensor one = ops::slice(a.masks, 0, i, 1);
    EXPECT_TRUE(bucket_of(compute_mask_ratio(one)).has_value());
  }
  EXPECT_GT(ops::max_abs_diff(a.masks, make_batch(m, c, 2, {0, 2}).masks), 0.0f);
  c.fixed_samples = true;
  EXPECT_EQ(ops::max_abs_diff(make_batch(m, c, 1, {1}).images, make_batch(m, c, 9, {1}).images), 0.0f);
  EXPECT_EQ(ops::max_abs_diff(make_batch(m, c, 1, {1}).masks, make_batch(m, c, 9, {1}).masks), 0.0f);
}

TEST(Batching, MaskDirectory) {
  TempDir dir;
  save_mask(generate_irregular_mask({0.3, 0.4}, 1, {128, 100}), dir / "m1.png");
  TrainConfig c = small_config();
  c.mask_dir = dir.path().string();
  const Batch b = make_batch(four_images(), c, 1, {0});
  EXPECT_EQ(ops::max_abs_diff(ops::reshape(b.masks, {1, 128, 128}), load_mask(dir / "m1.png")), 0.0f);
  std::filesystem::remove(dir / "m1.png");
  save_mask(generate_irregular_mask({0.3, 0.4}, 1, {256, 100}), dir / "m2.png");
  EXPECT_THROW(make_batch(four_images(), c, 1, {0}), ShapeError);
}

TEST(Trainer, L1OnlyStepLeavesCriticUntouched) {
  TrainConfig c = small_config();
  c.weights.adv = c.weights.perc = c.weights.style = 0.0;
  Trainer t(c);
  EXPECT_FALSE(t.trains_critic());
  const Batch b = make_batch(four_images(), c, 1, {0, 1});
  const uint64_t critic_before = hash_tensors(t.critic().state());
  const uint64_t gen_before = hash_tensors(t.generator().parameters());
  const StepMetrics m = t.step(b);
  EXPECT_EQ(hash_tensors(t.critic().state()), critic_before);
  EXPECT_NE(hash_tensors(t.generator().parameters()), gen_before);
  EXPECT_GT(m.l1, 0.0);
  EXPECT_EQ(m.total, m.l1);
  EXPECT_EQ(m.adv, 0.0);
  EXPECT_EQ(m.critic_loss, 0.0);
  EXPECT_EQ(t.steps_done(), 1);
}

TEST(Trainer, HalfStepsTouchOnlyTheirOwnNetwork) {
  TrainConfig c = small_config();
  c.weights.perc = c.weights.style = 0.0;  // adversarial coupling on
  Trainer t(c);
  ASSERT_TRUE(t.trains_critic());
  const Batch b = make_batch(four_images(), c, 1, {0, 1});
  const StepContext ctx = t.prepare(b);
  StepMetrics m;
  const uint64_t gen0 = hash_tensors(t.generator().parameters());
  const uint64_t crit0 = hash_tensors(t.critic().parameters());
  t.critic_update(ctx, m);
  EXPECT_EQ(hash_tensors(t.generator().parameters()), gen0);
  const uint64_t crit1 = hash_tensors(t.critic().parameters());
  EXPECT_NE(crit1, crit0);
  t.generator_update(ctx, m);
  EXPECT_EQ(hash_tensors(t.critic().parameters()), crit1);
  EXPECT_NE(hash_tensors(t.generator().parameters()), gen0);
  EXPECT_TRUE(all_finite(m));
  EXPECT_GT(m.gp, 0.0);
  for (const NamedTensor& p : t.critic().parameters()) EXPECT_TRUE(p.tensor.requires_grad()) << p.name;
}

TEST(Trainer, FullObjectiveSmokeIsFiniteAndDeterministic) {
  TrainConfig c = small_config();
  const DatasetManifest m = four_images();
  std::vector<StepMetrics> runs[2];
  for (auto& run : runs) {
    Trainer t(c);
    for (int64_t s = 0; s < 2; ++s) run.push_back(t.step(make_batch(m, c, 1, {static_cast<size_t>(2 * s), 3})));
  }
  for (size_t i = 0; i < 2; ++i) {
    EXPECT_TRUE(all_finite(runs[0][i]));
    EXPECT_GT(runs[0][i].perc, 0.0);
    EXPECT_GT(runs[0][i].style, 0.0);
    EXPECT_EQ(runs[0][i].to_json(), runs[1][i].to_json());
  }
}

TEST(Trainer, NonFiniteInputNamesTheFailure) {
  TrainConfig c = small_config();
  c.weights.adv = c.weights.perc = c.weights.style = 0.0;
  Trainer t(c);
  Batch b = make_batch(four_images(), c, 1, {0, 1});
  b.images.mutable_data()[10] = std::nanf("");
  EXPECT_THROW(t.step(b), NumericError);
}

TEST(Train, ResumeMatchesUninterruptedRun) {
  TempDir dir;
  TrainConfig c = small_config();
  c.weights.adv = c.weights.perc = c.weights.style = 0.0;
  const DatasetManifest m = four_images();

  TrainOptions full;
  full.out_dir = dir / "full";
  uint64_t gen_a = 0, opt_a = 0;
  {
    const CheckpointRecord a = train(m, c, full);
    EXPECT_EQ(a.epoch, 2);
    EXPECT_EQ(a.step, 4);
    gen_a = hash_tensors(a.generator);
    opt_a = hash_tensors(a.generator_optimizer);
  }

  TrainOptions first;
  first.out_dir = dir / "split";
  first.stop_after_epochs = 1;
  EXPECT_EQ(train(m, c, first).epoch, 1);
  EXPECT_TRUE(std::filesystem::exists(dir / "split" / "checkpoint_epoch0001.lbam"));
  EXPECT_TRUE(std::filesystem::exists(dir / "split" / "checkpoint_latest.lbam"));
  TrainOptions second;
  second.out_dir = dir / "split";
  second.resume = dir / "split" / "checkpoint_latest.lbam";
  int steps_seen = 0;
  second.on_step = [&](const StepMetrics&) { ++steps_seen; };
  {
    const CheckpointRecord b = train(m, c, second);
    EXPECT_EQ(steps_seen, 2);
    EXPECT_EQ(b.epoch, 2);
    EXPECT_EQ(b.step, 4);
    EXPECT_EQ(hash_tensors(b.generator), gen_a);
    EXPECT_EQ(hash_tensors(b.generator_optimizer), opt_a);
  }

  const auto la = read_metrics(dir / "full" / "metrics.jsonl");
  const auto lb = read_metrics(dir / "split" / "metrics.jsonl");
  ASSERT_EQ(la.size(), 4u);
  ASSERT_EQ(lb.size(), 4u);
  for (size_t i = 0; i < 4; ++i) EXPECT_EQ(la[i].to_json(), lb[i].to_json()) << i;
  // only the final epoch is written with a large cadence
  EXPECT_TRUE(std::filesystem::exists(dir / "full" / "checkpoint_epoch0002.lbam"));
  EXPECT_FALSE(std::filesystem::exists(dir / "full" / "checkpoint_epoch0001.lbam"));
  const CheckpointRecord disk = load_checkpoint(dir / "full" / "checkpoint_latest.lbam");
  EXPECT_EQ(hash_tensors(disk.generator), gen_a);
  EXPECT_EQ(train_config_from_json(disk.config).seed, c.seed);
}

TEST(Train, InputErrors) {
  TempDir dir;
  TrainConfig c = small_config();
  TrainOptions o;
  o.out_dir = dir / "x";
  DatasetManifest empty;
  EXPECT_THROW(train(empty, c, o), ConfigError);
  DatasetManifest one = four_images();
  one.files.resize(1);
  EXPECT_THROW(train(one, c, o), ConfigError);
  std::ofstream(dir / "metrics.jsonl") << "{not json\n";
  EXPECT_THROW(read_metrics(dir / "metrics.jsonl"), CorruptFileError);
}
