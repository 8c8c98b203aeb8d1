#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <random>

#include "uqdepth/config.hpp"
#include "uqdepth/errors.hpp"

using namespace uqd;

namespace {

std::string config_error(const std::string& text) {
  try {
    make_run_config(parse_key_values(text, "run.cfg"));
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST(Config, ParsesCommentsAndWhitespace) {
  const KeyValues kv = parse_key_values("# header\n  method = gnll  # trailing\n\nepochs=3\r\n");
  EXPECT_EQ(kv, (KeyValues{{"method", "gnll"}, {"epochs", "3"}}));
}

TEST(Config, LaterAssignmentsWin) {
  const RunConfig c = make_run_config({{"epochs", "3"}, {"epochs", "7"}});
  EXPECT_EQ(c.train.epochs, 7u);
}

TEST(Config, AppliesEveryKind) {
  const RunConfig c = make_run_config(parse_key_values(
      "method = se\nheads = 4\nflips = v\nenc_channels = 8, 12\nlr_multiplier = 10\nmodel_name = tiny\n"
      "log10_mode = rmse\naggregation = macro\nvariance_floor = 1e-4\n"));
  EXPECT_EQ(c.train.uq.method, Method::SE);
  EXPECT_EQ(c.train.uq.heads, 4u);
  EXPECT_FALSE(c.train.uq.flips.horizontal);
  EXPECT_TRUE(c.train.uq.flips.vertical);
  EXPECT_EQ(c.train.model.enc_channels, (std::vector<std::size_t>{8, 12}));
  EXPECT_DOUBLE_EQ(c.train.effective_lr(), 6e-4);
  EXPECT_EQ(c.model_name, "tiny");
  EXPECT_EQ(c.log10_mode, Log10Mode::Rmse);
  EXPECT_EQ(c.aggregation, Aggregation::Macro);
  EXPECT_EQ(c.train.uq.variance_floor, 1e-4);
  EXPECT_EQ(c.train.loss.variance_floor, 1e-4);
}

TEST(Config, ErrorsNameOriginLineAndKey) {
  EXPECT_NE(config_error("epochs = 3\nnot an assignment\n").find("run.cfg:2"), std::string::npos);
  EXPECT_NE(config_error("bogus = 1\n").find("bogus"), std::string::npos);
  EXPECT_NE(config_error("epochs = three\n").find("epochs"), std::string::npos);
  EXPECT_NE(config_error("epochs = -1\n").find("nonnegative"), std::string::npos);
  EXPECT_NE(config_error("flips = x\n").find("flips"), std::string::npos);
  EXPECT_NE(config_error("model_name = a,b\n").find("model_name"), std::string::npos);
  EXPECT_NE(config_error("method = bayes\n"), "");
  EXPECT_NE(config_error("= 4\n").find("empty key"), std::string::npos);
}

TEST(Config, SnapshotRoundTripsExactly) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(1e-9, 1.0);
  for (int trial = 0; trial < 50; ++trial) {
    RunConfig c;
    c.train.lr_base = u(rng);
    c.train.weight_decay = u(rng);
    c.train.loss.lambda = u(rng);
    c.train.model.dropout_rate = u(rng) * 0.9;
    c.train.uq.flips = FlipSet{bool(trial & 1), bool(trial & 2)};
    c.train.seed = rng();
    c.train.uq.method = static_cast<Method>(trial % 6);
    const std::string snap = config_snapshot(c);
    const RunConfig back = make_run_config(parse_key_values(snap));
    EXPECT_EQ(config_snapshot(back), snap);
    EXPECT_EQ(back.train.lr_base, c.train.lr_base);
    EXPECT_EQ(back.train.seed, c.train.seed);
  }
}

TEST(Config, SnapshotStartsWithEffectiveLr) {
  const std::string snap = config_snapshot(RunConfig{});
  EXPECT_EQ(snap.rfind("# effective_lr = 0.006\n", 0), 0u) << snap;
}

TEST(Config, EveryKeyIsAccepted) {
  const auto keys = config_keys();
  EXPECT_EQ(keys.size(), 29u);
  RunConfig c;
  for (const auto& [k, v] : parse_key_values(config_snapshot(RunConfig{}))) {
    EXPECT_NO_THROW(apply_setting(c, k, v)) << k;
  }
  EXPECT_EQ(config_snapshot(c), config_snapshot(RunConfig{}));
}

TEST(Config, ReadMissingFileIsIoError) {
  EXPECT_THROW(read_key_values("/nonexistent/run.cfg"), IoError);
  const auto p = std::filesystem::temp_directory_path() / "uqdepth_cfg.txt";
  std::ofstream(p) << "epochs = 2\n";
  EXPECT_EQ(read_key_values(p), (KeyValues{{"epochs", "2"}}));
  std::filesystem::remove(p);
}

TEST(Config, SplitAssignment) {
  EXPECT_EQ(split_assignment("a = b=c"), (std::pair<std::string, std::string>{"a", "b=c"}));
  EXPECT_THROW(split_assignment("novalue"), ConfigError);
}
