#include <gtest/gtest.h>

#include <sstream>

#include "fairdet/config.hpp"

using namespace fairdet;

TEST(KeyValues, ParsesCommentsAndWhitespace) {
  std::istringstream is("# header\n  lambda_fair = 0.01  # inline\n\nchannels=4, 8\nseed=3\n");
  const KeyValues kv = parse_key_values(is);
  ASSERT_EQ(kv.size(), 3u);
  EXPECT_EQ(kv.at("lambda_fair"), "0.01");
  EXPECT_EQ(kv.at("channels"), "4, 8");
}

TEST(KeyValues, MalformedLines) {
  std::istringstream no_eq("lambda_fair 0.01\n");
  EXPECT_THROW(parse_key_values(no_eq), ConfigError);
  std::istringstream no_key("=3\n");
  EXPECT_THROW(parse_key_values(no_key), ConfigError);
  EXPECT_THROW(load_key_values("/nonexistent/run.cfg"), ConfigError);
}

TEST(TrainConfigText, AppliesAndRoundTrips) {
  TrainConfig c;
  apply_train_config(c, {{"channels", "4,8"},
                         {"learning_rate", "0.1"},
                         {"fairness_mode", "all_groups"},
                         {"defer_alignment", "true"},
                         {"input_scale", "2.5"},
                         {"seed", "42"}},
                     true);
  EXPECT_EQ(c.detector.channels, (std::vector<Index>{4, 8}));
  EXPECT_EQ(c.learning_rate, 0.1);
  EXPECT_EQ(c.fairness_mode, FairnessMode::AllGroups);
  EXPECT_TRUE(c.defer_alignment);
  EXPECT_EQ(c.detector.input_scale, 2.5);
  EXPECT_EQ(c.seed, 42u);

  std::istringstream is(to_text(c));
  TrainConfig back;
  apply_train_config(back, parse_key_values(is), true);
  EXPECT_EQ(back, c);

  std::istringstream defaults(to_text(TrainConfig{}));
  TrainConfig d;
  d.epochs = 1;
  apply_train_config(d, parse_key_values(defaults), true);
  EXPECT_EQ(d, TrainConfig{});
}

TEST(GenConfigText, AppliesAndRoundTrips) {
  GenConfig c;
  apply_gen_config(c,
                   {{"count", "800"},
                    {"leakage", "0.25"},
                    {"proportions", "0.125,0.125,0.125,0.125,0.125,0.125,0.125,0.125"}},
                   true);
  EXPECT_EQ(c.count, 800);
  EXPECT_EQ(c.leakage, 0.25);
  EXPECT_EQ(c.proportions[7], 0.125);
  std::istringstream is(to_text(c));
  GenConfig back;
  apply_gen_config(back, parse_key_values(is), true);
  EXPECT_EQ(back, c);
}

TEST(ConfigText, Errors) {
  TrainConfig t;
  EXPECT_THROW(apply_train_config(t, {{"lambda", "0.1"}}, true), ConfigError);
  EXPECT_NO_THROW(apply_train_config(t, {{"count", "5"}}, false));
  EXPECT_THROW(apply_train_config(t, {{"epochs", "many"}}), ConfigError);
  EXPECT_THROW(apply_train_config(t, {{"learning_rate", "0.1x"}}), ConfigError);
  EXPECT_THROW(apply_train_config(t, {{"fairness_mode", "some"}}), ConfigError);
  EXPECT_THROW(apply_train_config(t, {{"defer_alignment", "maybe"}}), ConfigError);
  EXPECT_THROW(apply_train_config(t, {{"seed", "-1"}}), ConfigError);
  GenConfig g;
  EXPECT_THROW(apply_gen_config(g, {{"proportions", "0.5,0.5"}}), ConfigError);
  EXPECT_THROW(apply_gen_config(g, {{"epochs", "3"}}, true), ConfigError);
}
