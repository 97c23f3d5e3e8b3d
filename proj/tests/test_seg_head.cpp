#include <gtest/gtest.h>

#include <cmath>

#include "avsam/model.hpp"
#include "test_util.hpp"

using namespace avsam;

namespace {


Tensor decode(const Model& m, const PromptSet& prompts, std::uint64_t seed = 1) {
  ForwardOptions fo;
  fo.prompts = prompts;
  return m.predict(testutil::random_tensor({m.cfg.audio.num_bins(), m.cfg.audio.num_frames()}, seed, -8, 1),
                   testutil::random_tensor({3, m.cfg.model.image_size, m.cfg.model.image_size}, seed + 1, 0, 1), fo)
      .values;
}

}  // namespace

TEST(PositionalEncoding, KnownValues) {
  const auto pe0 = seg_head::positional_encoding(0.0, 0.0, 8);
  EXPECT_EQ(pe0, (std::vector<double>{0, 0, 1, 1, 0, 0, 1, 1}));
  const auto pe = seg_head::positional_encoding(0.25, 0.5, 8);
  EXPECT_NEAR(pe[0], 1.0, 1e-15);   // sin(2 pi * 1 * 0.25)
  EXPECT_NEAR(pe[1], 0.0, 1e-15);   // sin(2 pi * 2 * 0.25)
  EXPECT_NEAR(pe[3], -1.0, 1e-15);  // cos(2 pi * 2 * 0.25)
  EXPECT_NEAR(pe[6], -1.0, 1e-15);  // cos(2 pi * 1 * 0.5)
}

TEST(MaskDecoder, OutputsFullResolutionLogits) {
  const Model m = Model::init(Config{});
  const Tensor logits = decode(m, {});
  EXPECT_EQ(logits.shape, (Shape{64, 64}));
  EXPECT_TRUE(logits.all_finite());
}

TEST(MaskDecoder, SingleStageConfigurationWorks) {
  Config cfg = Config::tiny();
  cfg.model.S = 1;
  cfg.model.image_size = 8;
  EXPECT_EQ(decode(Model::init(cfg), {}).shape, (Shape{8, 8}));
}

TEST(PromptEncoder, PromptsChangeThePrediction) {
  const Model m = Model::init(Config::tiny());
  PromptSet ps;
  ps.points = {{4.0, 5.0, true}};
  const Tensor none = decode(m, {}), point = decode(m, ps);
  EXPECT_GT(max_abs_diff(none, point), 1e-6);
  ps.boxes = {{1, 1, 9, 12}};
  EXPECT_GT(max_abs_diff(point, decode(m, ps)), 1e-6);
}

TEST(PromptEncoder, OutOfBoundsPromptsRejected) {
  const Model m = Model::init(Config::tiny());
  PromptSet ps;
  ps.points = {{17.0, 3.0, true}};
  EXPECT_THROW(decode(m, ps), ContractError);
  ps.points.clear();
  ps.boxes = {{5, 5, 2, 9}};
  EXPECT_THROW(decode(m, ps), ContractError);
}

TEST(Bce, ZeroLogitsGiveLogTwo) {
  const Tensor y = testutil::random_tensor({6, 6}, 3, 0, 1);
  Tensor bin = y;
  for (double& v : bin.data) v = v > 0.5 ? 1.0 : 0.0;
  EXPECT_NEAR(seg_head::bce_loss(MaskLogits{Tensor({6, 6}, 0.0)}, GroundTruthMask{bin}), std::log(2.0), 1e-12);
}

TEST(Bce, SaturatedCorrectIsNearZeroAndClamped) {
  Tensor y({2, 2}, {1, 0, 1, 0});
  const Tensor logits({2, 2}, {40, -40, 40, -40});
  const double loss = seg_head::bce_loss(MaskLogits{logits}, GroundTruthMask{y});
  EXPECT_LT(loss, 1e-6);
  EXPECT_NEAR(loss, -std::log(1.0 - 1e-7), 1e-12);
  // Saturated-wrong is bounded by the clamp.
  EXPECT_NEAR(seg_head::bce_loss(MaskLogits{Tensor({1}, {-40})}, GroundTruthMask{Tensor({1}, {1})}), -std::log(1e-7), 1e-9);
}

TEST(Bce, GradientMatchesSigmoidMinusTargetAndVanishesUnderClamp) {
  Graph g;
  const Var m = g.leaf(Tensor({4}, {0.3, -1.2, 40.0, 2.0}));
  const Tensor y({4}, {1, 0, 1, 0});
  g.backward(seg_head::bce_loss(m, y));
  const Tensor& d = g.grad(m);
  auto sig = [](double x) { return 1.0 / (1.0 + std::exp(-x)); };
  EXPECT_NEAR(d[0], (sig(0.3) - 1.0) / 4.0, 1e-15);
  EXPECT_NEAR(d[1], sig(-1.2) / 4.0, 1e-15);
  EXPECT_EQ(d[2], 0.0);
  EXPECT_NEAR(d[3], sig(2.0) / 4.0, 1e-15);
}

TEST(Bce, RejectsNonBinaryOrMismatchedTargets) {
  EXPECT_THROW(seg_head::bce_loss(MaskLogits{Tensor({2}, 0.0)}, GroundTruthMask{Tensor({2}, {0.5, 1.0})}), ContractError);
  EXPECT_THROW(seg_head::bce_loss(MaskLogits{Tensor({2}, 0.0)}, GroundTruthMask{Tensor({3}, 0.0)}), ContractError);
}
