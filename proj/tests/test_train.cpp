#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "avsam/runtime.hpp"
#include "avsam/train.hpp"
#include "test_util.hpp"

using namespace avsam;

namespace {

constexpr double kOverfitFirst = 0.69276057683795245;
constexpr double kOverfitLast = 0.67547587739720361;

std::vector<Example> tiny_examples(const Config& cfg, std::size_t n, std::uint64_t seed) {
  std::vector<Example> out;
  const std::size_t s = cfg.model.image_size;
  for (std::size_t i = 0; i < n; ++i) {
    Example e;
    e.id = "ex" + std::to_string(i);
    e.spectrogram = testutil::random_tensor({cfg.audio.num_bins(), cfg.audio.num_frames()}, seed + 3 * i, -8, 1);
    e.image = testutil::random_tensor({3, s, s}, seed + 3 * i + 1, 0, 1);
    e.mask = testutil::random_tensor({s, s}, seed + 3 * i + 2, 0, 1);
    for (double& v : e.mask.data) v = v > 0.6 ? 1.0 : 0.0;
    out.push_back(std::move(e));
  }
  return out;
}

std::vector<const Example*> pointers(const std::vector<Example>& ex) {
  std::vector<const Example*> p;
  for (const auto& e : ex) p.push_back(&e);
  return p;
}

}  // namespace

TEST(Adam, SingleStepMatchesClosedForm) {
  // f(x) = (x - 3)^2 at x = 1: g = -4. After one step m_hat = g, v_hat = g^2,
  // so x moves by lr * g / (|g| + eps).
  TrainConfig cfg;
  cfg.lr = 0.01;
  Tensor x({1}, {1.0}), m({1}, 0.0), v({1}, 0.0);
  adam_update(x, m, v, Tensor({1}, {-4.0}), 1, cfg);
  EXPECT_NEAR(x[0], 1.0 + 0.01 * 4.0 / (4.0 + 1e-8), 1e-12);
  EXPECT_NEAR(m[0], -0.4, 1e-15);
  EXPECT_NEAR(v[0], 0.016, 1e-15);
}

TEST(Adam, SecondStepMatchesClosedForm) {
  TrainConfig cfg;
  cfg.lr = 0.1;
  Tensor x({1}, {0.0}), m({1}, 0.0), v({1}, 0.0);
  const double g1 = 2.0 * (0.0 - 3.0);
  adam_update(x, m, v, Tensor({1}, {g1}), 1, cfg);
  const double x1 = x[0];
  const double g2 = 2.0 * (x1 - 3.0);
  adam_update(x, m, v, Tensor({1}, {g2}), 2, cfg);
  const double m2 = 0.9 * (0.1 * g1) + 0.1 * g2, v2 = 0.999 * (0.001 * g1 * g1) + 0.001 * g2 * g2;
  const double expected = x1 - 0.1 * (m2 / (1 - 0.81)) / (std::sqrt(v2 / (1 - 0.999 * 0.999)) + 1e-8);
  EXPECT_NEAR(x[0], expected, 1e-12);
}

TEST(FreezePlan, AllFrozenLeavesEverythingIdentical) {
  const Config cfg = Config::tiny();
  const auto ex = tiny_examples(cfg, 2, 1);
  TrainState st = TrainState::fresh(Model::init(cfg));
  const ParamStore before = st.model.params;
  for (int i = 0; i < 3; ++i) train_step(st, pointers(ex), FreezePlan::all_frozen(), cfg.train);
  EXPECT_EQ(st.model.params, before);
  for (const auto& [n, t] : st.adam_m)
    for (double v : t.data) ASSERT_EQ(v, 0.0) << n;
}

TEST(FreezePlan, DecoderOnlyChangesOnlyDecoder) {
  const Config cfg = Config::tiny();
  const auto ex = tiny_examples(cfg, 2, 2);
  TrainState st = TrainState::fresh(Model::init(cfg));
  const ParamStore before = st.model.params;
  FreezePlan plan = FreezePlan::all_frozen();
  plan.mask_decoder = true;
  train_step(st, pointers(ex), plan, cfg.train);
  for (const auto& [name, t] : st.model.params.all()) {
    if (ParamStore::module_of(name) == "mask_decoder") {
      EXPECT_NE(t, before.at(name)) << name;
    } else {
      EXPECT_EQ(t, before.at(name)) << name;
    }
  }
  for (const auto& [n, t] : st.adam_v) {
    if (ParamStore::module_of(n) == "mask_decoder") continue;
    for (double v : t.data) ASSERT_EQ(v, 0.0) << n;
  }
}

TEST(FreezePlan, AblationRowsAndDescription) {
  const auto rows = FreezePlan::ablation_rows();
  EXPECT_FALSE(rows[0].mask_decoder || rows[0].prompt_encoder || rows[0].image_encoder);
  EXPECT_TRUE(rows[3].mask_decoder && rows[3].prompt_encoder && rows[3].image_encoder);
  for (const auto& r : rows) EXPECT_TRUE(r.fusion && r.audio_encoder);
  EXPECT_EQ(FreezePlan{}.describe().find("frozen"), std::string::npos);
  EXPECT_THROW(FreezePlan{}.trainable("decoder"), ContractError);
}

TEST(TrainStep, OverfitsOneBatch) {
  runtime::init();
  Config cfg = Config::tiny();
  cfg.train.lr = 1e-3;
  const auto ex = tiny_examples(cfg, 4, 5);
  TrainState st = TrainState::fresh(Model::init(cfg));
  const double first = train_step(st, pointers(ex), FreezePlan{}, cfg.train);
  double last = first;
  for (int i = 0; i < 50; ++i) last = train_step(st, pointers(ex), FreezePlan{}, cfg.train);
  EXPECT_LT(last, first);
  // Frozen run values (seed 0, tiny config, lr 1e-3).
  EXPECT_NEAR(first, kOverfitFirst, 1e-9);
  EXPECT_NEAR(last, kOverfitLast, 1e-9);
}

TEST(TrainStep, NonFiniteLossAborts) {
  const Config cfg = Config::tiny();
  auto ex = tiny_examples(cfg, 1, 7);
  ex[0].image[5] = std::numeric_limits<double>::quiet_NaN();
  TrainState st = TrainState::fresh(Model::init(cfg));
  EXPECT_THROW(train_step(st, pointers(ex), FreezePlan{}, cfg.train), InvariantError);
  EXPECT_THROW(train_step(st, {}, FreezePlan{}, cfg.train), ContractError);
}

TEST(RunTraining, ZeroEpochsReturnsInitialisation) {
  Config cfg = Config::tiny();
  cfg.train.epochs = 0;
  const auto res = run_training(tiny_examples(cfg, 3, 9), cfg, FreezePlan{});
  EXPECT_EQ(res.state.model.params, Model::init(cfg).params);
  EXPECT_TRUE(res.log.empty());
  EXPECT_EQ(res.checkpoint().step, 0u);
}

TEST(RunTraining, SameSeedIsBitIdentical) {
  Config cfg = Config::tiny();
  cfg.train.epochs = 2;
  cfg.train.batch_size = 2;
  const auto ex = tiny_examples(cfg, 5, 11);
  const auto a = run_training(ex, cfg, FreezePlan{});
  const auto b = run_training(ex, cfg, FreezePlan{});
  EXPECT_EQ(serialize_checkpoint(a.checkpoint()), serialize_checkpoint(b.checkpoint()));
  EXPECT_EQ(loss_csv(a.log), loss_csv(b.log));
  EXPECT_EQ(a.log.size(), 6u);
  cfg.train.seed = 1;
  EXPECT_NE(loss_csv(run_training(ex, cfg, FreezePlan{}).log), loss_csv(a.log));
}

TEST(RunTraining, EpochOrderIsAPermutation) {
  const auto o = epoch_order(50, 3, 2);
  std::vector<std::size_t> sorted(o);
  std::sort(sorted.begin(), sorted.end());
  for (std::size_t i = 0; i < 50; ++i) EXPECT_EQ(sorted[i], i);
  EXPECT_NE(o, epoch_order(50, 3, 3));
  EXPECT_EQ(o, epoch_order(50, 3, 2));
}

TEST(RunTraining, CheckpointResumesOptimizerState) {
  Config cfg = Config::tiny();
  const auto ex = tiny_examples(cfg, 2, 13);
  TrainState st = TrainState::fresh(Model::init(cfg));
  train_step(st, pointers(ex), FreezePlan{}, cfg.train);
  TrainState resumed = TrainState::from_checkpoint(deserialize_checkpoint(serialize_checkpoint(st.checkpoint()), "mem"), cfg);
  train_step(st, pointers(ex), FreezePlan{}, cfg.train);
  train_step(resumed, pointers(ex), FreezePlan{}, cfg.train);
  EXPECT_EQ(st.model.params, resumed.model.params);
  EXPECT_EQ(resumed.step, 2u);
}

TEST(Gradcheck, TinyModelPasses) {
  runtime::init();
  const auto rep = gradcheck(Config::tiny());
  EXPECT_TRUE(rep.passed()) << rep.table();
  EXPECT_LT(rep.max_rel, 1e-4);
}

TEST(Gradcheck, ZeroInitialisedOutputProjectionStillChecked) {
  GradcheckOptions opt;
  opt.zero_mu = true;
  const auto rep = gradcheck(Config::tiny(), opt);
  EXPECT_TRUE(rep.passed()) << rep.table();
  bool saw_mu = false;
  for (const auto& p : rep.params) saw_mu |= p.name == "fusion.s1.mu.weight";
  EXPECT_TRUE(saw_mu);
}

TEST(Gradcheck, CorruptedGradientIsCaught) {
  GradcheckOptions opt;
  opt.corrupt_param = "fusion.s2.theta.weight";
  const auto rep = gradcheck(Config::tiny(), opt);
  EXPECT_FALSE(rep.passed());
  EXPECT_GT(rep.max_rel, 1e-2);
}
