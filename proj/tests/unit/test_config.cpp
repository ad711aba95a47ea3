#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>

#include "punchline/config.hpp"
#include "punchline/errors.hpp"

using namespace punchline;
namespace fs = std::filesystem;

TEST(RunConfig, Presets) {
  const auto desk = RunConfig::from_preset("desk");
  EXPECT_EQ(desk.model, ModelConfig::desk());
  EXPECT_EQ(RunConfig{}.model, desk.model);
  const auto paper = RunConfig::from_preset("paper");
  EXPECT_EQ(paper.model.d_model, 512);
  EXPECT_EQ(paper.model.vocab_size, 25000);
  EXPECT_EQ(paper.max_triples, 10);
  EXPECT_DOUBLE_EQ(paper.dedup_threshold, 0.93);
  EXPECT_THROW(RunConfig::from_preset("huge"), ConfigError);
  EXPECT_NO_THROW(desk.validate());
  EXPECT_NO_THROW(paper.validate());
}

TEST(RunConfig, ParseOverridesPreset) {
  const auto c = RunConfig::parse(
      "# comment\n"
      "preset = paper\n"
      "\n"
      "d_model = 256  \n"
      "learning_rate=0.0005\n"
      "freeze_knowledge = yes\n"
      "seed = 18446744073709551615\n");
  EXPECT_EQ(c.preset, "paper");
  EXPECT_EQ(c.model.d_model, 256);
  EXPECT_EQ(c.model.n_blocks, 4);
  EXPECT_DOUBLE_EQ(c.train.learning_rate, 0.0005);
  EXPECT_TRUE(c.train.freeze_knowledge);
  EXPECT_EQ(c.train.seed, 18446744073709551615ull);
}

TEST(RunConfig, Errors) {
  EXPECT_THROW(RunConfig::parse("d_model = 64\npreset = paper\n"), ConfigError);
  EXPECT_THROW(RunConfig::parse("colour = red\n"), ConfigError);
  EXPECT_THROW(RunConfig::parse("d_model = 6.5\n"), ConfigError);
  EXPECT_THROW(RunConfig::parse("d_model\n"), ConfigError);
  EXPECT_THROW(RunConfig::parse("length_normalize = maybe\n"), ConfigError);
  try {
    RunConfig::parse("beam = 4\nbeam = x\n");
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("line 2"), std::string::npos);
  }
  RunConfig c;
  c.beam = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.dedup_threshold = 1.5;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.model.d_model = 63;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(RunConfig, TextAndJsonRoundTrip) {
  auto c = RunConfig::from_preset("paper");
  c.set("dropout", "0.15");
  c.set("learning_rate", "0.0001");
  c.set("length_normalize", "false");
  const auto again = RunConfig::parse(c.to_text());
  EXPECT_EQ(again.to_text(), c.to_text());
  EXPECT_EQ(again.to_json(), c.to_json());
  const auto j = c.to_json();
  EXPECT_EQ(j.at("preset"), "paper");
  EXPECT_DOUBLE_EQ(j.at("dropout").get<double>(), 0.15);
  EXPECT_EQ(j.at("length_normalize"), false);
  EXPECT_EQ(RunConfig::keys().size(), j.size());
  EXPECT_EQ(RunConfig::keys().front(), "preset");
}

TEST(RunConfig, LoadAndEnvironment) {
  const auto dir = fs::temp_directory_path() / "punchline_config";
  fs::create_directories(dir);
  std::ofstream(dir / "run.cfg") << "preset = desk\nbeam = 3\n";
  EXPECT_EQ(RunConfig::load(dir / "run.cfg").beam, 3);
  EXPECT_THROW(RunConfig::load(dir / "missing.cfg"), ConfigError);

  ::unsetenv(kConfigEnvVar);
  EXPECT_TRUE(resolve_config_path({}).empty());
  ::setenv(kConfigEnvVar, (dir / "run.cfg").c_str(), 1);
  EXPECT_EQ(resolve_config_path({}), dir / "run.cfg");
  EXPECT_EQ(resolve_config_path("other.cfg"), fs::path("other.cfg"));
  ::unsetenv(kConfigEnvVar);
}
