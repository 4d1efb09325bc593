#include <gtest/gtest.h>

#include <cstring>
#include <filesystem>
#include <fstream>

#include "hvfi/checkpoint.hpp"

using namespace hvfi;

namespace {

namespace fs = std::filesystem;

ModelConfig small(int levels = 2) {
  ModelConfig cfg;
  cfg.levels = levels;
  cfg.width = 8;
  cfg.kernel = 3;
  cfg.cabs = 1;
  cfg.rcab_layers = 1;
  return cfg;
}

class CheckpointFile : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("hvfi_ckpt_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  fs::path path(const char* name) const { return dir_ / name; }

  std::vector<char> bytes(const fs::path& p) const {
    std::ifstream is(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
  }
  void write(const fs::path& p, const std::vector<char>& b) const {
    std::ofstream os(p, std::ios::binary | std::ios::trunc);
    os.write(b.data(), static_cast<std::streamsize>(b.size()));
  }

  fs::path dir_;
};

// A model plus optimizer whose moments and parameters have all moved off
// their initial values.
struct Trained {
  Model<float> model;
  AdamW<float> opt;
  explicit Trained(const ModelConfig& cfg, std::uint64_t seed = 3)
      : model(cfg, seed), opt(model.params()) {
    Rng rng(seed);
    for (int s = 0; s < 2; ++s) {
      for (const auto& e : model.params().entries()) {
        Tensor<float> p = e.value;
        for (float& g : p.mutable_grad()) g = static_cast<float>(rng.uniform(-1, 1));
      }
      opt.step(1e-3);
    }
  }
};

}  // namespace

TEST_F(CheckpointFile, RoundTripIsBitExact) {
  Trained a(small());
  save_checkpoint(path("a.ckpt"), capture_checkpoint(a.model, &a.opt));
  EXPECT_FALSE(fs::exists(path("a.ckpt.tmp")));

  const Checkpoint ck = load_checkpoint(path("a.ckpt"));
  EXPECT_EQ(ck.model, small());
  EXPECT_TRUE(ck.has_optimizer);
  EXPECT_EQ(ck.steps, 2);

  Model<float> b(small(), 99);  // different init
  AdamW<float> opt(b.params());
  restore_checkpoint(ck, b, &opt);
  const auto& ea = a.model.params().entries();
  const auto& eb = b.params().entries();
  ASSERT_EQ(ea.size(), eb.size());
  for (std::size_t k = 0; k < ea.size(); ++k) {
    EXPECT_EQ(ea[k].name, eb[k].name);
    ASSERT_EQ(0, std::memcmp(ea[k].value.data().data(), eb[k].value.data().data(),
                             sizeof(float) * static_cast<std::size_t>(ea[k].value.numel())))
        << ea[k].name;
    EXPECT_EQ(a.opt.first_moments()[k], opt.first_moments()[k]);
    EXPECT_EQ(a.opt.second_moments()[k], opt.second_moments()[k]);
  }
  EXPECT_EQ(opt.steps(), 2);

  // Saving the restored state reproduces the file byte for byte.
  save_checkpoint(path("b.ckpt"), capture_checkpoint(b, &opt));
  EXPECT_EQ(bytes(path("a.ckpt")), bytes(path("b.ckpt")));
}

TEST_F(CheckpointFile, ParametersOnly) {
  Model<float> m(small());
  save_checkpoint(path("p.ckpt"), capture_checkpoint(m));
  const auto ck = load_checkpoint(path("p.ckpt"));
  EXPECT_FALSE(ck.has_optimizer);
  const Model<float> back = load_model(path("p.ckpt"));
  EXPECT_EQ(back.params().scalar_count(), m.params().scalar_count());
}

TEST_F(CheckpointFile, HeaderIsReadableText) {
  Model<float> m(small());
  save_checkpoint(path("h.ckpt"), capture_checkpoint(m));
  const auto b = bytes(path("h.ckpt"));
  ASSERT_GT(b.size(), 16u);
  EXPECT_EQ(std::string(b.data(), 4), "HVFI");
  std::uint32_t version = 0;
  std::memcpy(&version, b.data() + 4, 4);
  EXPECT_EQ(version, Checkpoint::kVersion);
  std::uint64_t length = 0;
  std::memcpy(&length, b.data() + 8, 8);
  const std::string header(b.data() + 16, length);
  EXPECT_EQ(header.rfind("config " + small().str() + "\n", 0), 0u);
  const auto& first = m.params().entries().front();
  EXPECT_NE(header.find("tensor " + first.name + " f32 "), std::string::npos);
}

TEST_F(CheckpointFile, CorruptMagicIsFormatError) {
  Model<float> m(small());
  save_checkpoint(path("m.ckpt"), capture_checkpoint(m));
  auto b = bytes(path("m.ckpt"));
  b[1] = 'X';
  write(path("m.ckpt"), b);
  EXPECT_THROW(load_checkpoint(path("m.ckpt")), CheckpointFormatError);
}

TEST_F(CheckpointFile, OtherVersionIsVersionError) {
  Model<float> m(small());
  save_checkpoint(path("v.ckpt"), capture_checkpoint(m));
  auto b = bytes(path("v.ckpt"));
  b[4] = 7;
  write(path("v.ckpt"), b);
  EXPECT_THROW(load_checkpoint(path("v.ckpt")), CheckpointVersionError);
}

TEST_F(CheckpointFile, TruncationIsTruncatedError) {
  Trained t(small());
  save_checkpoint(path("t.ckpt"), capture_checkpoint(t.model, &t.opt));
  const auto full = bytes(path("t.ckpt"));
  for (std::size_t keep : {std::size_t{6}, std::size_t{40}, full.size() / 2, full.size() - 1}) {
    write(path("t.ckpt"), std::vector<char>(full.begin(), full.begin() + static_cast<long>(keep)));
    EXPECT_THROW(load_checkpoint(path("t.ckpt")), CheckpointTruncatedError) << keep;
  }
}

TEST_F(CheckpointFile, ErrorsAreDistinct) {
  // None of the specific errors is a subtype of another.
  using F = CheckpointFormatError;
  using V = CheckpointVersionError;
  using S = CheckpointShapeError;
  using T = CheckpointTruncatedError;
  EXPECT_FALSE((std::is_base_of_v<F, V> || std::is_base_of_v<V, F>));
  EXPECT_FALSE((std::is_base_of_v<S, T> || std::is_base_of_v<T, S>));
  EXPECT_FALSE((std::is_base_of_v<F, S> || std::is_base_of_v<F, T>));
}

TEST_F(CheckpointFile, DeeperPyramidIntoShallowerModelIsShapeError) {
  Model<float> deep(small(4));
  save_checkpoint(path("deep.ckpt"), capture_checkpoint(deep));
  Model<float> shallow(small(3));
  const auto ck = load_checkpoint(path("deep.ckpt"));

  // Expected culprit: the first model tensor without an equal-named,
  // equal-shaped checkpoint tensor at the same position.
  std::string culprit;
  const auto& me = shallow.params().entries();
  for (std::size_t k = 0; k < me.size(); ++k) {
    if (k >= ck.params.size() || ck.params[k].name != me[k].name ||
        ck.params[k].shape != me[k].value.shape()) {
      culprit = me[k].name;
      break;
    }
  }
  ASSERT_FALSE(culprit.empty());
  try {
    restore_checkpoint(ck, shallow);
    FAIL() << "expected CheckpointShapeError";
  } catch (const CheckpointShapeError& e) {
    EXPECT_NE(std::string(e.what()).find("'" + culprit + "'"), std::string::npos) << e.what();
  }
}

TEST_F(CheckpointFile, ShapeMismatchLeavesModelUntouched) {
  Model<float> wide([] {
    auto c = small();
    c.width = 12;
    return c;
  }());
  Model<float> target(small());
  const float before = target.params().entries().front().value.data()[0];
  EXPECT_THROW(restore_checkpoint(capture_checkpoint(wide), target), CheckpointShapeError);
  EXPECT_EQ(target.params().entries().front().value.data()[0], before);
}
