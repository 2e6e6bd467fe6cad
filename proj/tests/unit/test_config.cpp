#include <gtest/gtest.h>

#include <nlohmann/json.hpp>

#include "deepstamp/config.hpp"
#include "deepstamp/rng.hpp"
#include "fixtures.hpp"

using namespace deepstamp;
using namespace deepstamp::config;

TEST(Config, EmptyDocumentGivesDefaultsWithDerivedSeeds) {
  const auto c = parse("{}");
  EXPECT_EQ(c.seed, 0u);
  EXPECT_EQ(c.data.source, DataSource::synthetic);
  EXPECT_EQ(c.stamp.blend, 0.5);
  EXPECT_EQ(c.nets.classifier, "F-small");
  EXPECT_EQ(c.train.stamper.steps, 300u);
  EXPECT_EQ(c.data.seed, derive_seed(0, "data"));
  EXPECT_EQ(c.train.stamper.seed, derive_seed(0, "stamper"));
  EXPECT_NE(c.train.classifier.seed, c.train.stamped_classifier.seed);
  EXPECT_EQ(c.train.classifier.eval_every, 0u);
}

TEST(Config, MasterSeedChangesDerivedSeedsButNotExplicitOnes) {
  const auto a = parse(R"({"seed": 1, "train": {"stamper": {"seed": 99}}})");
  const auto b = parse(R"({"seed": 2, "train": {"stamper": {"seed": 99}}})");
  EXPECT_NE(a.data.seed, b.data.seed);
  EXPECT_EQ(a.train.stamper.seed, 99u);
  EXPECT_EQ(b.train.stamper.seed, 99u);
}

TEST(Config, StamperInheritsSharedSettings) {
  const auto c = parse(R"({"stamp": {"blend": 0.7}, "nets": {"discriminator": "D-transposed",
                           "n_discriminators": 3}})");
  EXPECT_EQ(c.train.stamper.blend, 0.7);
  EXPECT_EQ(c.train.stamper.n_discriminators, 3u);
  EXPECT_EQ(c.train.stamper.discriminator_architecture, "D-transposed");
}

TEST(Config, RejectsUnknownKeysWithPath) {
  try {
    parse(R"({"train": {"stamper": {"stepz": 3}}})");
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("$.train.stamper"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("stepz"), std::string::npos);
  }
  EXPECT_THROW(parse(R"({"bogus": 1})"), ConfigError);
}

TEST(Config, RejectsBadValues) {
  EXPECT_THROW(parse("not json"), ConfigError);
  EXPECT_THROW(parse(R"({"stamp": {"blend": 1.5}})"), ConfigError);
  EXPECT_THROW(parse(R"({"stamp": {"blend": "half"}})"), ConfigError);
  EXPECT_THROW(parse(R"({"nets": {"classifier": "F-tiny"}})"), ConfigError);
  EXPECT_THROW(parse(R"({"nets": {"n_discriminators": 0}})"), ConfigError);
  EXPECT_THROW(parse(R"({"train": {"classifier": {"epochs": -1}}})"), ConfigError);
  EXPECT_THROW(parse(R"({"train": {"stamper": {"optimizer": {"kind": "rmsprop"}}}})"), ConfigError);
  EXPECT_THROW(parse(R"({"train": {"stamper": {"weights": {"task": -1}}}})"), ConfigError);
  EXPECT_THROW(parse(R"({"stamp": {"opacity_range": [0.9, 0.1]}})"), ConfigError);
  EXPECT_THROW(parse(R"({"plan": {"schemes": ["static", "stealth"]}})"), ConfigError);
  EXPECT_THROW(parse(R"({"data": {"source": "cifar"}})"), ConfigError);
}

TEST(Config, ResolvedDocumentRoundTrips) {
  const auto c = parse(R"({"seed": 5, "stamp": {"opacity_range": [0.2, 0.4]},
                           "train": {"stamper": {"lr_discriminator": 1e-3},
                                     "classifier": {"eval_every": 4}}})");
  const auto text = to_json(c);
  const auto again = parse(text);
  EXPECT_EQ(to_json(again), text);
  EXPECT_EQ(again.train.classifier.eval_every, 4u);
  EXPECT_EQ(*again.train.stamper.lr_discriminator, 1e-3);
  EXPECT_FALSE(again.train.stamper.lr_watermarker);
  ASSERT_TRUE(again.stamp.opacity_range);
  EXPECT_EQ(again.stamp.opacity_range->hi, 0.4);
  EXPECT_TRUE(nlohmann::json::parse(text).contains("plan"));
}

TEST(Config, StampSpecScalesOpacityRangeWithBlend) {
  auto c = parse(R"({"stamp": {"blend": 0.5, "opacity_range": [0.2, 0.4]}})");
  const auto s = c.stamp.spec(StampScheme::opacity, 1.0);
  ASSERT_TRUE(s.opacity_range);
  EXPECT_DOUBLE_EQ(s.opacity_range->lo, 0.4);
  EXPECT_DOUBLE_EQ(s.opacity_range->hi, 0.8);
  EXPECT_NE(c.stamp.spec(StampScheme::static_mark, 0.5).rng_seed,
            c.stamp.spec(StampScheme::static_mark, 1.0).rng_seed);
}

TEST(Config, LoadReportsMissingFile) {
  EXPECT_THROW(load("/nonexistent/deepstamp.json"), ConfigError);
  deepstamp::testing::TempDir dir("config");
  dataio::write_text_atomic(dir / "c.json", R"({"seed": 3})");
  EXPECT_EQ(load(dir / "c.json").seed, 3u);
}
