#include <gtest/gtest.h>

#include <fstream>

#include "avsam/config.hpp"
#include "test_util.hpp"

using namespace avsam;

TEST(Config, Defaults) {
  const Config c;
  EXPECT_EQ(c.audio.sample_rate, 22050);
  EXPECT_EQ(c.audio.n_fft, 512);
  EXPECT_EQ(c.audio.num_bins(), 257u);
  EXPECT_EQ(c.audio.num_frames(), 300u);
  EXPECT_EQ(c.train.lr, 1e-4);
  EXPECT_EQ(c.train.beta1, 0.9);
  EXPECT_EQ(c.train.beta2, 0.999);
  EXPECT_EQ(c.train.adam_eps, 1e-8);
  EXPECT_EQ(c.train.batch_size, 8u);
  EXPECT_EQ(c.train.epochs, 20u);
  EXPECT_EQ(c.eval.beta_sq, 0.3);
  EXPECT_EQ(c.model.D, 32u);
  EXPECT_EQ(c.model.image_size, 64u);
  EXPECT_NO_THROW(c.validate());
}

TEST(Config, TinyGeometry) {
  const Config c = Config::tiny();
  EXPECT_EQ(c.audio.num_bins(), 33u);
  EXPECT_EQ(c.audio.num_frames(), 30u);
  EXPECT_NO_THROW(c.validate());
}

TEST(Config, FileOverridesAndComments) {
  const auto dir = testutil::temp_dir("config_file");
  std::ofstream((dir / "c.cfg").string()) << "# comment\ntrain.lr = 0.001\n\nmodel.audio_channels = 4,8,8,16  # trailing\n"
                                             "fusion.softmax = true\n";
  Config c;
  c.load_file((dir / "c.cfg").string());
  EXPECT_EQ(c.train.lr, 0.001);
  EXPECT_EQ(c.model.audio_channels, (std::vector<std::size_t>{4, 8, 8, 16}));
  EXPECT_TRUE(c.model.fusion_softmax);
}

TEST(Config, UnknownKeysAndBadValuesRejected) {
  Config c;
  EXPECT_THROW(c.set("train.learning_rate", "1"), ContractError);
  EXPECT_THROW(c.set("train.lr", "fast"), ContractError);
  EXPECT_THROW(c.set("train.batch_size", "2x"), ContractError);
  EXPECT_THROW(c.set("fusion.softmax", "maybe"), ContractError);
  const auto dir = testutil::temp_dir("config_bad");
  std::ofstream((dir / "c.cfg").string()) << "model.D 32\n";
  EXPECT_THROW(c.load_file((dir / "c.cfg").string()), ContractError);
}

TEST(Config, ValidationCatchesBadGeometry) {
  Config c;
  c.train.lr = 0;
  EXPECT_THROW(c.validate(), ContractError);
  c = Config{};
  c.train.batch_size = 0;
  EXPECT_THROW(c.validate(), ContractError);
  c = Config{};
  c.model.image_size = 60;
  EXPECT_THROW(c.validate(), ContractError);
  c = Config{};
  c.model.decoder_heads = 5;
  EXPECT_THROW(c.validate(), ContractError);
}

TEST(Config, DumpRoundTripsThroughSet) {
  Config c;
  c.set("train.lr", "0.00025");
  c.set("model.seed", "9");
  Config d;
  std::istringstream is(c.dump());
  std::string line;
  while (std::getline(is, line)) {
    const auto eq = line.find(" = ");
    d.set(line.substr(0, eq), line.substr(eq + 3));
  }
  EXPECT_EQ(d.dump(), c.dump());
  EXPECT_EQ(d.train.lr, 0.00025);
}

TEST(Config, ArchitectureHashIgnoresTrainingKeys) {
  Config a, b;
  b.train.lr = 0.5;
  b.train.seed = 3;
  EXPECT_EQ(a.architecture_hash(), b.architecture_hash());
  b.model.D = 16;
  EXPECT_NE(a.architecture_hash(), b.architecture_hash());
}
