#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>

#include "hvfi/checkpoint.hpp"
#include "hvfi/data.hpp"
#include "hvfi/optim.hpp"
#include "hvfi/train.hpp"

using namespace hvfi;

namespace {

// Centroid of the pixels whose red channel exceeds `threshold`.
std::pair<double, double> red_centroid(const Tensor<float>& img, float threshold) {
  const Shape s = img.shape();
  double sx = 0, sy = 0, n = 0;
  for (std::int64_t y = 0; y < s.h; ++y) {
    for (std::int64_t x = 0; x < s.w; ++x) {
      if (img.at(0, 0, y, x) > threshold) {
        sx += static_cast<double>(x);
        sy += static_cast<double>(y);
        n += 1;
      }
    }
  }
  return {sx / n, sy / n};
}

// Flat grey background with one solid red rectangle.
SynthScene single_shape(int size, double dx, double dy) {
  SynthScene scene;
  scene.size = size;
  SynthShape s;
  s.cx = size / 2.0;
  s.cy = size / 2.0;
  s.rx = 5;
  s.ry = 4;
  s.dx = dx;
  s.dy = dy;
  s.color0[0] = 0.9f;
  s.color0[1] = 0.1f;
  s.color0[2] = 0.1f;
  scene.shapes.push_back(s);
  return scene;
}

TrainConfig tiny_config() {
  TrainConfig cfg;
  cfg.model.levels = 2;
  cfg.model.width = 8;
  cfg.model.kernel = 3;
  cfg.model.cabs = 1;
  cfg.model.rcab_layers = 1;
  cfg.model.window = 4;
  cfg.crop = 16;
  cfg.batch = 2;
  cfg.epochs = 3;
  cfg.lr = 1e-3;
  return cfg;
}

std::vector<FrameTriplet> tiny_data(int count = 4, int size = 24) {
  SynthOptions o;
  o.count = count;
  o.size = size;
  o.motion_lo = 1;
  o.motion_hi = 4;
  o.seed = 7;
  return gen_synthetic(o);
}

std::vector<float> flat_params(Model<float>& m) {
  std::vector<float> out;
  for (const auto& e : m.params().entries()) {
    out.insert(out.end(), e.value.data().begin(), e.value.data().end());
  }
  return out;
}

}  // namespace

// ---------------------------------------------------------------- optimizer

TEST(AdamW, ZeroGradientWithoutDecayIsIdentity) {
  ParamStore<float> store;
  Rng rng(1);
  auto p = store.create_uniform("p", Shape{1, 2, 3, 3}, 1.0, rng);
  const std::vector<float> before(p.data().begin(), p.data().end());
  p.mutable_grad();  // allocated, all zero
  AdamW<float> opt(store, AdamWOptions{0.9, 0.999, 1e-8, 0.0});
  for (int i = 0; i < 3; ++i) opt.step(1e-2);
  for (std::size_t i = 0; i < before.size(); ++i) EXPECT_EQ(p.data()[i], before[i]);
}

TEST(AdamW, FirstStepMovesBySignTimesLr) {
  for (double g : {0.37, -2.5, 1e-3}) {
    ParamStore<double> store;
    auto p = store.create_constant("p", Shape{1, 1, 1, 1}, 0.5);
    p.mutable_grad()[0] = g;
    AdamW<double> opt(store, AdamWOptions{0.9, 0.999, 1e-8, 0.0});
    opt.step(0.01);
    // m_hat = g and v_hat = g^2 after bias correction.
    EXPECT_NEAR(p.data()[0], 0.5 - 0.01 * (g > 0 ? 1 : -1), 1e-7) << g;
  }
}

TEST(AdamW, SecondStepMatchesClosedForm) {
  ParamStore<double> store;
  auto p = store.create_constant("p", Shape{1, 1, 1, 1}, 1.0);
  AdamW<double> opt(store, AdamWOptions{0.9, 0.999, 1e-8, 0.1});
  const double lr = 0.05, g1 = 0.4, g2 = -0.3;
  p.mutable_grad()[0] = g1;
  opt.step(lr);
  p.mutable_grad()[0] = g2;
  opt.step(lr);

  double w = 1.0;
  double m = 0.1 * g1, v = 0.001 * g1 * g1;
  w = w * (1 - lr * 0.1) - lr * (m / 0.1) / (std::sqrt(v / 0.001) + 1e-8);
  m = 0.9 * m + 0.1 * g2;
  v = 0.999 * v + 0.001 * g2 * g2;
  w = w * (1 - lr * 0.1) - lr * (m / (1 - 0.81)) / (std::sqrt(v / (1 - 0.999 * 0.999)) + 1e-8);
  EXPECT_NEAR(p.data()[0], w, 1e-14);
  EXPECT_EQ(opt.steps(), 2);
}

TEST(AdamW, WeightDecayIsDecoupled) {
  ParamStore<double> store;
  auto p = store.create_constant("p", Shape{1, 1, 1, 1}, 2.0);
  AdamW<double> opt(store, AdamWOptions{0.9, 0.999, 1e-8, 0.5});
  opt.step(0.1);  // no gradient at all: only the decay acts
  EXPECT_DOUBLE_EQ(p.data()[0], 2.0 * (1 - 0.1 * 0.5));
}

TEST(CosineLr, Endpoints) {
  EXPECT_DOUBLE_EQ(cosine_lr(3e-4, 0, 100), 3e-4);
  EXPECT_DOUBLE_EQ(cosine_lr(3e-4, 50, 100), 1.5e-4);
  EXPECT_EQ(cosine_lr(3e-4, 100, 100), 0.0);
  EXPECT_EQ(cosine_lr(3e-4, 150, 100), 0.0);
  for (int t = 1; t <= 100; ++t) EXPECT_LE(cosine_lr(1.0, t, 100), cosine_lr(1.0, t - 1, 100));
}

// ---------------------------------------------------------------- synthetic data

TEST(Synthetic, SameSeedIsBitIdentical) {
  SynthOptions o;
  o.count = 3;
  o.size = 32;
  o.motion_hi = 6;
  o.intervals = {1, 2};
  const auto a = gen_synthetic(o);
  const auto b = gen_synthetic(o);
  ASSERT_EQ(a.size(), 6u);
  for (std::size_t k = 0; k < a.size(); ++k) {
    for (auto member : {&FrameTriplet::frame_a, &FrameTriplet::frame_b, &FrameTriplet::target}) {
      const auto da = (a[k].*member).data();
      const auto db = (b[k].*member).data();
      ASSERT_TRUE(std::equal(da.begin(), da.end(), db.begin()));
    }
    EXPECT_EQ(a[k].motion_px, b[k].motion_px);
  }
  o.seed = 2;
  const auto c = gen_synthetic(o);
  EXPECT_FALSE(std::equal(a[0].target.data().begin(), a[0].target.data().end(),
                          c[0].target.data().begin()));
}

TEST(Synthetic, StaticSceneHasIdenticalFrames) {
  SynthOptions o;
  o.count = 4;
  o.size = 32;
  o.motion_lo = 0;
  o.motion_hi = 0;
  for (const auto& t : gen_synthetic(o)) {
    EXPECT_EQ(t.motion_px, 0.0);
    const auto a = t.frame_a.data(), b = t.frame_b.data(), g = t.target.data();
    EXPECT_TRUE(std::equal(a.begin(), a.end(), b.begin()));
    EXPECT_TRUE(std::equal(a.begin(), a.end(), g.begin()));
  }
}

TEST(Synthetic, MidpointShowsHalfTheDisplacement) {
  const SynthScene scene = single_shape(40, 8, 0);
  const auto t = scene_triplet(scene, 1);
  EXPECT_EQ(t.motion_px, 8.0);
  // The integer shift makes the comparison exact: target(x) == frame_a(x - 4).
  for (int ch = 0; ch < 3; ++ch) {
    for (int y = 0; y < 40; ++y) {
      for (int x = 4; x < 40; ++x) {
        ASSERT_EQ(t.target.at(0, ch, y, x), t.frame_a.at(0, ch, y, x - 4)) << x << "," << y;
        if (x >= 8) ASSERT_EQ(t.frame_b.at(0, ch, y, x), t.frame_a.at(0, ch, y, x - 8));
      }
    }
  }
}

TEST(Synthetic, IntervalsShareTheTargetAndScaleMotion) {
  SynthOptions o;
  o.count = 2;
  o.size = 48;
  o.motion_lo = 2;
  o.motion_hi = 5;
  o.intervals = {1, 2, 3, 4};
  const auto data = gen_synthetic(o);
  ASSERT_EQ(data.size(), 8u);
  for (std::size_t scene = 0; scene < 2; ++scene) {
    const auto& base = data[scene * 4];
    EXPECT_GE(base.motion_px, 2.0);
    EXPECT_LE(base.motion_px, 5.0);
    for (int i = 1; i < 4; ++i) {
      const auto& t = data[scene * 4 + static_cast<std::size_t>(i)];
      EXPECT_EQ(t.interval, i + 1);
      EXPECT_NEAR(t.motion_px, base.motion_px * (i + 1), 1e-12);
      EXPECT_NEAR(t.flow_x, base.flow_x * (i + 1), 1e-12);
      const auto a = t.target.data(), b = base.target.data();
      EXPECT_TRUE(std::equal(a.begin(), a.end(), b.begin()));
    }
  }
}

TEST(Synthetic, MetadataMatchesFastestShape) {
  Rng rng(3);
  for (int k = 0; k < 20; ++k) {
    const SynthScene scene = random_scene(64, 3, 9, rng);
    EXPECT_GE(scene.shapes.size(), 2u);
    EXPECT_LE(scene.shapes.size(), 5u);
    const double m = scene.motion_px();
    EXPECT_GE(m, 3.0);
    EXPECT_LE(m, 9.0);
    const auto t = scene_triplet(scene, 1);
    EXPECT_NEAR(std::hypot(t.flow_x, t.flow_y), m, 1e-12);
  }
}

TEST(Synthetic, RejectsMotionBeyondHalfSize) {
  SynthOptions o;
  o.size = 32;
  o.motion_hi = 16;
  EXPECT_THROW(gen_synthetic(o), std::invalid_argument);
  o.motion_hi = 5;
  o.intervals = {1, 4};
  EXPECT_THROW(gen_synthetic(o), std::invalid_argument);
  o.intervals = {1, 3};
  EXPECT_NO_THROW(gen_synthetic(o));
  o.motion_lo = 6;
  EXPECT_THROW(gen_synthetic(o), std::invalid_argument);
}

TEST(Synthetic, ValuesStayInUnitRange) {
  SynthOptions o;
  o.count = 5;
  o.size = 32;
  for (const auto& t : gen_synthetic(o)) {
    for (float v : t.target.data()) {
      ASSERT_GE(v, 0.0f);
      ASSERT_LE(v, 1.0f);
    }
  }
}

// ---------------------------------------------------------------- augmentation

TEST(Augment, ReversalIsAnInvolution) {
  const auto t = scene_triplet(single_shape(24, 3, -2), 1);
  const auto r = reverse(t);
  EXPECT_EQ(r.frame_a.ptr(), t.frame_b.ptr());
  EXPECT_EQ(r.target.ptr(), t.target.ptr());
  EXPECT_EQ(r.flow_x, -3.0);
  const auto rr = reverse(r);
  EXPECT_EQ(rr.frame_a.ptr(), t.frame_a.ptr());
  EXPECT_EQ(rr.frame_b.ptr(), t.frame_b.ptr());
  EXPECT_EQ(rr.flow_x, 3.0);
  EXPECT_EQ(rr.flow_y, -2.0);
}

TEST(Augment, CropOffsetsAgreeAcrossFrames) {
  FrameTriplet t;
  t.frame_a = Tensor<float>(Shape{1, 3, 40, 40});
  t.frame_b = Tensor<float>(Shape{1, 3, 40, 40});
  t.target = Tensor<float>(Shape{1, 3, 40, 40});
  // One marker pixel at the same place in all three frames.
  for (auto* img : {&t.frame_a, &t.frame_b, &t.target}) {
    img->mutable_data()[static_cast<std::size_t>(1 * 1600 + 21 * 40 + 17)] = 1.0f;
  }
  Rng rng(5);
  for (int k = 0; k < 30; ++k) {
    const auto a = augment(t, AugmentOptions{16, true, false}, rng);
    std::vector<std::int64_t> where;
    for (const auto* img : {&a.frame_a, &a.frame_b, &a.target}) {
      std::int64_t found = -1;
      for (std::int64_t i = 0; i < img->numel(); ++i) {
        if (img->data()[static_cast<std::size_t>(i)] == 1.0f) found = i;
      }
      where.push_back(found);
    }
    EXPECT_EQ(where[0], where[1]);
    EXPECT_EQ(where[0], where[2]);
  }
}

TEST(Augment, HorizontalFlipTurnsLeftMotionRight) {
  const auto t = scene_triplet(single_shape(32, -6, 0), 1);
  const double before = red_centroid(t.frame_b, 0.5f).first - red_centroid(t.frame_a, 0.5f).first;
  EXPECT_NEAR(before, -6.0, 1e-9);
  const auto f = flip_horizontal(t);
  const double after = red_centroid(f.frame_b, 0.5f).first - red_centroid(f.frame_a, 0.5f).first;
  EXPECT_NEAR(after, 6.0, 1e-9);
  EXPECT_EQ(f.flow_x, 6.0);
  EXPECT_EQ(f.flow_y, 0.0);
  // Flipping twice restores the frames.
  const auto ff = flip_horizontal(f);
  const auto a = ff.frame_a.data(), b = t.frame_a.data();
  EXPECT_TRUE(std::equal(a.begin(), a.end(), b.begin()));
}

TEST(Augment, VerticalFlipNegatesVerticalMotion) {
  const auto t = scene_triplet(single_shape(32, 0, 5), 1);
  const auto f = flip_vertical(t);
  const double dy = red_centroid(f.frame_b, 0.5f).second - red_centroid(f.frame_a, 0.5f).second;
  EXPECT_NEAR(dy, -5.0, 1e-9);
  EXPECT_EQ(f.flow_y, -5.0);
}

TEST(Augment, RejectsCropLargerThanFrame) {
  const auto t = scene_triplet(single_shape(24, 1, 0), 1);
  Rng rng(1);
  EXPECT_THROW(augment(t, AugmentOptions{32, true, true}, rng), DimensionError);
}

TEST(Augment, StackBatch) {
  const auto t = scene_triplet(single_shape(16, 1, 0), 1);
  const auto b = stack_batch({t.frame_a, t.target});
  EXPECT_EQ(b.shape(), (Shape{2, 3, 16, 16}));
  EXPECT_EQ(b.at(1, 2, 7, 9), t.target.at(0, 2, 7, 9));
  EXPECT_THROW(stack_batch({t.frame_a, Tensor<float>(Shape{1, 3, 8, 8})}), DimensionError);
}

// ---------------------------------------------------------------- config

TEST(TrainConfig, TextRoundTrip) {
  TrainConfig cfg = tiny_config();
  cfg.lr = 2.5e-4;
  cfg.flip = false;
  cfg.model.residual_update = false;
  const TrainConfig back = TrainConfig::parse(cfg.str());
  EXPECT_EQ(back.lr, cfg.lr);
  EXPECT_EQ(back.crop, cfg.crop);
  EXPECT_EQ(back.flip, false);
  EXPECT_EQ(back.model, cfg.model);
}

TEST(TrainConfig, ParsesCommentsAndRejectsBadInput) {
  const auto cfg = TrainConfig::parse("# toy run\nlr = 1e-3  # fast\nlevels=2\ncrop = 32\n\n");
  EXPECT_EQ(cfg.lr, 1e-3);
  EXPECT_EQ(cfg.model.levels, 2);
  EXPECT_THROW(TrainConfig::parse("bogus = 1\n"), std::invalid_argument);
  EXPECT_THROW(TrainConfig::parse("epochs = many\n"), std::invalid_argument);
  EXPECT_THROW(TrainConfig::parse("crop = 30\n"), std::invalid_argument);  // 3 levels need /4
  EXPECT_THROW(TrainConfig::parse("lr = -1\n"), std::invalid_argument);
}

// ---------------------------------------------------------------- trainer

TEST(Trainer, ZeroLearningRateLeavesParametersUnchanged) {
  TrainConfig cfg = tiny_config();
  cfg.lr = 0;
  Trainer trainer(cfg, tiny_data());
  const auto before = flat_params(trainer.model());
  trainer.epoch();
  EXPECT_EQ(trainer.steps(), 2);
  EXPECT_EQ(flat_params(trainer.model()), before);
}

TEST(Trainer, EpochOneLossIsReproducible) {
  Trainer a(tiny_config(), tiny_data());
  Trainer b(tiny_config(), tiny_data());
  const auto ea = a.epoch();
  const auto eb = b.epoch();
  EXPECT_NEAR(ea.total, eb.total, 1e-6);
  EXPECT_EQ(ea.l1, eb.l1);
  EXPECT_EQ(flat_params(a.model()), flat_params(b.model()));
}

TEST(Trainer, ResumeReplaysTheUninterruptedRun) {
  const auto dir = std::filesystem::temp_directory_path() / "hvfi_resume_test";
  std::filesystem::create_directories(dir);
  const auto ckpt = dir / "mid.ckpt";

  Trainer straight(tiny_config(), tiny_data());
  straight.epoch();
  straight.step();  // stop mid-epoch
  save_checkpoint(ckpt, straight.checkpoint());
  const auto tail_reference = straight.epoch();

  Trainer resumed(tiny_config(), tiny_data());
  resumed.resume(load_checkpoint(ckpt));
  EXPECT_EQ(resumed.steps(), 3);
  const auto tail = resumed.epoch();
  EXPECT_EQ(tail.total, tail_reference.total);
  EXPECT_EQ(tail.lr, tail_reference.lr);
  EXPECT_EQ(flat_params(resumed.model()), flat_params(straight.model()));
  std::filesystem::remove_all(dir);
}

TEST(Trainer, LearningRateFollowsCosineOverTheRun) {
  TrainConfig cfg = tiny_config();
  cfg.epochs = 2;
  Trainer t(cfg, tiny_data());
  EXPECT_EQ(t.total_steps(), 4);
  std::vector<double> lrs;
  while (!t.done()) lrs.push_back(t.step().lr);
  ASSERT_EQ(lrs.size(), 4u);
  for (std::size_t k = 0; k < 4; ++k) {
    EXPECT_DOUBLE_EQ(lrs[k], cosine_lr(cfg.lr, static_cast<std::int64_t>(k), 4));
  }
}

TEST(Trainer, SameEpochSeesSameBatches) {
  Trainer t(tiny_config(), tiny_data());
  const auto a = t.batch(1);
  const auto b = t.batch(1);
  EXPECT_TRUE(std::equal(a.frame_a.data().begin(), a.frame_a.data().end(), b.frame_a.data().begin()));
  const auto c = t.batch(3);  // same slot, next epoch: new order / augmentation
  EXPECT_FALSE(std::equal(a.frame_a.data().begin(), a.frame_a.data().end(), c.frame_a.data().begin()));
  EXPECT_EQ(a.frame_a.shape(), (Shape{2, 3, 16, 16}));
}

TEST(Trainer, NonFiniteLossReportsStep) {
  auto data = tiny_data();
  for (auto& t : data) {
    for (float& v : t.target.mutable_data()) v = std::numeric_limits<float>::quiet_NaN();
  }
  TrainConfig cfg = tiny_config();
  cfg.augment = false;
  Trainer trainer(cfg, data);
  try {
    trainer.step();
    FAIL() << "expected NonFiniteLossError";
  } catch (const NonFiniteLossError& e) {
    EXPECT_EQ(e.step(), 0);
    EXPECT_NE(std::string(e.what()).find("step 0"), std::string::npos);
  }
}

TEST(Trainer, NearlyEveryParameterReceivesGradient) {
  TrainConfig cfg;  // default model
  cfg.crop = 32;
  cfg.batch = 1;
  cfg.augment = false;
  Rng rng(11);
  FrameTriplet t;
  t.frame_a = random_uniform<float>(Shape{1, 3, 32, 32}, rng, 0, 1);
  t.frame_b = random_uniform<float>(Shape{1, 3, 32, 32}, rng, 0, 1);
  t.target = random_uniform<float>(Shape{1, 3, 32, 32}, rng, 0, 1);
  Trainer trainer(cfg, {t});
  trainer.step();
  EXPECT_LT(zero_gradient_fraction(trainer.model().params()), 0.01);
}

TEST(Trainer, RunWritesLogAndCheckpoint) {
  const auto dir = std::filesystem::temp_directory_path() / "hvfi_run_test";
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  TrainConfig cfg = tiny_config();
  cfg.epochs = 2;
  cfg.checkpoint_every = 1;
  Trainer trainer(cfg, tiny_data());
  int epochs = 0;
  trainer.run({dir / "model.ckpt", dir / "loss.tsv", [&](const EpochStats&) { ++epochs; }});
  EXPECT_EQ(epochs, 2);
  EXPECT_TRUE(std::filesystem::exists(dir / "model.ckpt"));
  EXPECT_FALSE(std::filesystem::exists(dir / "model.ckpt.tmp"));

  std::ifstream log(dir / "loss.tsv");
  std::string header, row;
  std::getline(log, header);
  EXPECT_EQ(header, "epoch\tstep\tlr\ttotal\tl1_s1\tl1_s2\tcensus_s1\tcensus_s2");
  int rows = 0;
  while (std::getline(log, row)) ++rows;
  EXPECT_EQ(rows, 2);
  const auto ck = load_checkpoint(dir / "model.ckpt");
  EXPECT_EQ(ck.steps, 4);
  std::filesystem::remove_all(dir);
}
