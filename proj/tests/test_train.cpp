#include <gtest/gtest.h>

#include "edgespot/train.hpp"
#include "test_util.hpp"

using namespace edgespot;
using edgespot::fixtures::tiny_config;
using edgespot::fixtures::tiny_scene_config;

namespace {

std::vector<float> flat_params(const Trainer& t) {
  std::vector<float> v;
  for (const auto& [name, p] : t.model().parameters().items) v.insert(v.end(), p.data().begin(), p.data().end());
  return v;
}

TrainConfig short_run(std::size_t steps) {
  TrainConfig c;
  c.steps = steps;
  c.warmup = 2;
  c.seed = 5;
  return c;
}

}  // namespace

TEST(Schedule, WarmupThenCosineToFloor) {
  TrainConfig c;
  c.steps = 1000;
  c.warmup = 50;
  c.optim.lr = 1e-3;
  EXPECT_NEAR(scheduled_lr(c, 0), 1e-3 / 50, 1e-15);
  EXPECT_NEAR(scheduled_lr(c, 49), 1e-3, 1e-15);
  EXPECT_NEAR(scheduled_lr(c, 50), 1e-3, 1e-15);
  EXPECT_NEAR(scheduled_lr(c, 525), 1e-3 * (0.1 + 0.9 * 0.5), 1e-12);
  EXPECT_NEAR(scheduled_lr(c, 1000), 1e-4, 1e-15);
  for (std::size_t s = 51; s < 1000; ++s) EXPECT_LE(scheduled_lr(c, s), scheduled_lr(c, s - 1));
}

TEST(BatchOrder, EachEpochVisitsEverySceneOnce) {
  const std::size_t n = 7, b = 3;
  std::vector<std::size_t> seen;
  for (std::size_t step = 0; step < 14; ++step) {
    auto idx = batch_indices(n, b, 9, step);
    seen.insert(seen.end(), idx.begin(), idx.end());
  }
  for (std::size_t e = 0; e < 6; ++e) {
    std::vector<std::size_t> epoch(seen.begin() + e * n, seen.begin() + (e + 1) * n);
    std::sort(epoch.begin(), epoch.end());
    for (std::size_t i = 0; i < n; ++i) EXPECT_EQ(epoch[i], i);
  }
  EXPECT_EQ(batch_indices(n, b, 9, 4), batch_indices(n, b, 9, 4));
  EXPECT_NE(batch_indices(50, 4, 1, 0), batch_indices(50, 4, 2, 0));
  EXPECT_THROW(batch_indices(0, 1, 0, 0), DataError);
}

TEST(Trainer, ZeroLearningRateLeavesParameters) {
  const auto scenes = generate_scenes(tiny_scene_config(), 2, 1);
  auto cfg = short_run(3);
  cfg.optim.lr = 0;
  Trainer t(tiny_config(), cfg, scenes);
  const auto before = flat_params(t);
  for (int i = 0; i < 3; ++i) t.run_step();
  EXPECT_EQ(flat_params(t), before);
}

TEST(Trainer, DeterministicReplay) {
  const auto scenes = generate_scenes(tiny_scene_config(), 3, 2);
  Trainer a(tiny_config(), short_run(4), scenes), b(tiny_config(), short_run(4), scenes);
  for (int i = 0; i < 4; ++i) EXPECT_EQ(a.run_step().to_json().dump(), b.run_step().to_json().dump());
  EXPECT_EQ(flat_params(a), flat_params(b));
}

TEST(Trainer, ResumeMatchesUninterruptedRun) {
  const auto scenes = generate_scenes(tiny_scene_config(), 3, 3);
  Trainer full(tiny_config(), short_run(6), scenes);
  std::vector<std::string> ref;
  for (int i = 0; i < 6; ++i) ref.push_back(full.run_step().to_json().dump());

  Trainer first(tiny_config(), short_run(6), scenes);
  for (int i = 0; i < 3; ++i) EXPECT_EQ(first.run_step().to_json().dump(), ref[i]);
  const auto path = std::filesystem::temp_directory_path() / ("edgespot_resume_" + std::to_string(::getpid()) + ".ckpt");
  save_checkpoint(path, first.checkpoint());

  Trainer second(tiny_config(), short_run(6), scenes);
  second.resume(load_checkpoint(path));
  EXPECT_EQ(second.step(), 3u);
  for (int i = 3; i < 6; ++i) EXPECT_EQ(second.run_step().to_json().dump(), ref[i]);
  EXPECT_EQ(flat_params(second), flat_params(full));
  std::filesystem::remove(path);
}

TEST(Trainer, ShapeMismatchNamesParameter) {
  const auto scenes = generate_scenes(tiny_scene_config(), 1, 4);
  Trainer a(tiny_config(), short_run(1), scenes);
  SpotterConfig wide = tiny_config();
  wide.channels = 12;
  Trainer b(wide, short_run(1), scenes);
  try {
    b.resume(a.checkpoint());
    FAIL() << "expected DataError";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("backbone.conv0"), std::string::npos) << e.what();
  }
}

TEST(Trainer, RejectsMismatchedImages) {
  SpotterConfig c = tiny_config();
  c.image_size = 128;
  EXPECT_THROW(Trainer(c, short_run(1), generate_scenes(tiny_scene_config(), 1, 1)), DataError);
  EXPECT_THROW(Trainer(tiny_config(), short_run(1), {}), DataError);
}

TEST(Trainer, LoadModelReproducesOutputs) {
  const auto scenes = generate_scenes(tiny_scene_config(), 2, 6);
  Trainer t(tiny_config(), short_run(2), scenes);
  t.run_step();
  t.run_step();
  const auto m = load_model(t.checkpoint());
  NoGradGuard ng;
  auto a = t.model().forward(scenes[0].image).heads.char_logits.data();
  auto b = m.forward(scenes[0].image).heads.char_logits.data();
  EXPECT_TRUE(std::equal(a.begin(), a.end(), b.begin()));
}

TEST(Trainer, SmallOverfitHalvesLoss) {
  const auto scenes = generate_scenes(tiny_scene_config(), 4, 7);
  auto cfg = short_run(200);
  cfg.warmup = 20;
  Trainer t(tiny_config(), cfg, scenes);
  double head = 0, tail = 0;
  for (std::size_t i = 0; i < 200; ++i) {
    const double l = t.run_step().loss.total;
    if (i < 10) head += l / 10;
    if (i >= 190) tail += l / 10;
  }
  EXPECT_LT(tail, 0.5 * head) << "first 10 mean " << head << ", last 10 mean " << tail;
}
