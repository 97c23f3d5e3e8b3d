#include <gtest/gtest.h>

#include "avsam/checkpoint.hpp"
#include "test_util.hpp"

using namespace avsam;

namespace {

Checkpoint sample_checkpoint() {
  Checkpoint c = make_checkpoint(Model::init(Config::tiny()));
  c.step = 17;
  std::uint64_t seed = 1;
  for (auto& [n, t] : c.adam_m) t = testutil::random_tensor(t.shape, seed++);
  for (auto& [n, t] : c.adam_v) t = testutil::random_tensor(t.shape, seed++, 0, 1);
  return c;
}

}  // namespace

TEST(Checkpoint, RoundTripIsBitExact) {
  const auto dir = testutil::temp_dir("ckpt_rt");
  const Checkpoint c = sample_checkpoint();
  save_checkpoint(c, (dir / "c.avsam").string());
  const Checkpoint back = load_checkpoint((dir / "c.avsam").string());
  EXPECT_TRUE(back == c);
  EXPECT_EQ(back.step, 17u);
  const Model m = restore_model(back, Config::tiny());
  EXPECT_EQ(m.params, c.params);
}

TEST(Checkpoint, StartsWithMagicAndVersion) {
  const auto bytes = serialize_checkpoint(sample_checkpoint());
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 8), "AVSAMCKP");
  EXPECT_EQ(bytes[8], 1);
  EXPECT_EQ(bytes[9] | bytes[10] | bytes[11], 0);
}

TEST(Checkpoint, TruncationIsAnError) {
  const auto bytes = serialize_checkpoint(sample_checkpoint());
  for (std::size_t cut : {std::size_t{4}, std::size_t{20}, bytes.size() / 2, bytes.size() - 1}) {
    std::vector<unsigned char> part(bytes.begin(), bytes.begin() + static_cast<std::ptrdiff_t>(cut));
    EXPECT_THROW(deserialize_checkpoint(part, "cut"), ContractError) << cut;
  }
}

TEST(Checkpoint, VersionMismatchIsAnError) {
  auto bytes = serialize_checkpoint(sample_checkpoint());
  bytes[8] = 2;
  try {
    deserialize_checkpoint(bytes, "v2");
    FAIL();
  } catch (const ContractError& e) {
    EXPECT_NE(std::string(e.what()).find("version 2"), std::string::npos);
  }
  bytes[0] = 'X';
  EXPECT_THROW(deserialize_checkpoint(bytes, "magic"), ContractError);
}

TEST(Checkpoint, DifferentArchitectureRefused) {
  const Checkpoint c = sample_checkpoint();
  Config other = Config::tiny();
  other.model.D = 12;
  try {
    restore_model(c, other);
    FAIL();
  } catch (const ContractError& e) {
    EXPECT_NE(std::string(e.what()).find("config hash"), std::string::npos);
  }
  Config lr_only = Config::tiny();
  lr_only.train.lr = 0.5;
  EXPECT_NO_THROW(restore_model(c, lr_only));
}

TEST(Checkpoint, StoredConfigIsRecovered) {
  Config cfg = Config::tiny();
  cfg.train.epochs = 3;
  cfg.eval.beta_sq = 1.0;
  const Checkpoint c = make_checkpoint(Model::init(cfg));
  const Config back = checkpoint_config(c);
  EXPECT_EQ(back.dump(), cfg.dump());
}
