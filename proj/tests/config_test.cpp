#include "naref/config.hpp"
#include "naref/error.hpp"
#include "test_support.hpp"

#include <gtest/gtest.h>

#include <fstream>

namespace naref {
namespace {

using testing::ScratchDir;

ErrorKind kind_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.kind();
  }
  ADD_FAILURE() << "no error thrown";
  return ErrorKind::Io;
}

TEST(ConfigParse, ScalarsSectionsAndComments) {
  const auto t = parse_config(
      "top = 1\n"
      "# comment\n"
      "[train]\n"
      "learning_rate = 1e-3  # trailing\n"
      "epochs = 1_000\n"
      "[filter]\n"
      "scorer_a = \"ss#im\"\n"
      "flag = false\n");
  EXPECT_EQ(std::get<std::int64_t>(t.at("top")), 1);
  EXPECT_DOUBLE_EQ(std::get<double>(t.at("train.learning_rate")), 1e-3);
  EXPECT_EQ(std::get<std::int64_t>(t.at("train.epochs")), 1000);
  EXPECT_EQ(std::get<std::string>(t.at("filter.scorer_a")), "ss#im");
  EXPECT_FALSE(std::get<bool>(t.at("filter.flag")));
}

TEST(ConfigParse, ErrorsNameSourceAndLine) {
  try {
    parse_config("[a]\nx = 1\nx = [1, 2]\n", "cfg.toml");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Parse);
    EXPECT_NE(std::string(e.what()).find("cfg.toml:3"), std::string::npos) << e.what();
  }
  EXPECT_EQ(kind_of([] { parse_config("x = 1\nx = 2\n"); }), ErrorKind::Parse);
  EXPECT_EQ(kind_of([] { parse_config("[a\n"); }), ErrorKind::Parse);
  EXPECT_EQ(kind_of([] { parse_config("novalue\n"); }), ErrorKind::Parse);
  EXPECT_EQ(kind_of([] { parse_config("s = \"open\n"); }), ErrorKind::Parse);
  EXPECT_EQ(kind_of([] { parse_config("t = {a = 1}\n"); }), ErrorKind::Parse);
}

TEST(RunConfig, ApplyRejectsUnknownKeysAndWrongTypes) {
  RunConfig cfg;
  EXPECT_EQ(kind_of([&] { cfg.apply(parse_config("[train]\nlearning_rat = 1.0\n")); }), ErrorKind::InvalidArgument);
  EXPECT_EQ(kind_of([&] { cfg.apply(parse_config("[train]\nepochs = 1.5\n")); }), ErrorKind::InvalidArgument);
  EXPECT_EQ(kind_of([&] { cfg.apply(parse_config("[run]\njobs = -1\n")); }), ErrorKind::InvalidArgument);
  EXPECT_EQ(kind_of([&] { cfg.apply(parse_config("[materialize]\nuse_troi = 1\n")); }), ErrorKind::InvalidArgument);
  // Integers widen to float fields.
  cfg.apply(parse_config("[train]\nlearning_rate = 1\n"));
  EXPECT_DOUBLE_EQ(cfg.train.learning_rate, 1.0);
}

TEST(RunConfig, OverridesAndResolve) {
  RunConfig cfg;
  cfg.apply_override("run.seed=42");
  cfg.apply_override("run.jobs = 3");
  cfg.apply_override("filter.scorer_b=ssim");
  cfg.apply_override("materialize.use_troi=false");
  cfg.resolve();
  EXPECT_EQ(cfg.train.seed, 42u);
  EXPECT_EQ(cfg.triplets.seed, 42u);
  EXPECT_EQ(cfg.train.jobs, 3u);
  EXPECT_EQ(cfg.materialize.flow.jobs, 3u);
  EXPECT_EQ(cfg.filter.scorer_b, "ssim");
  EXPECT_FALSE(cfg.materialize.use_troi);
  EXPECT_EQ(kind_of([&] { cfg.apply_override("no-equals"); }), ErrorKind::InvalidArgument);

  RunConfig bad;
  bad.apply_override("train.epochs=0");
  EXPECT_EQ(kind_of([&] { bad.resolve(); }), ErrorKind::InvalidArgument);
}

TEST(RunConfig, SnapshotRoundTripsEveryField) {
  RunConfig cfg;
  cfg.seed = 0xFFFFFFFFull;
  cfg.train.learning_rate = 0.1 + 0.2;  // not exactly representable in short form
  cfg.triplets.scene_threshold = 30.0 / 255.0;
  cfg.filter.scorer_a = "we\"ird\\name";
  cfg.study.show_aligned = true;
  cfg.heatmap.beta = 2.0;
  const std::string snap = cfg.snapshot();

  RunConfig back;
  back.apply(parse_config(snap));
  EXPECT_EQ(back.snapshot(), snap);
  EXPECT_EQ(back.train.learning_rate, cfg.train.learning_rate);
  EXPECT_EQ(back.triplets.scene_threshold, cfg.triplets.scene_threshold);
  EXPECT_EQ(back.filter.scorer_a, cfg.filter.scorer_a);
  EXPECT_EQ(back.seed, cfg.seed);
  EXPECT_TRUE(back.study.show_aligned);
}

TEST(RunConfig, ToyFileLoads) {
  const RunConfig cfg = load_run_config(std::filesystem::path(NAREF_DATA_DIR) / "toy.toml", {"train.epochs=5"});
  EXPECT_EQ(cfg.seed, 7u);
  EXPECT_DOUBLE_EQ(cfg.train.learning_rate, 1e-3);
  EXPECT_EQ(cfg.train.epochs, 5);
  EXPECT_EQ(cfg.scenes.heldout, 1);

  RunConfig preset = RunConfig::toy();
  preset.train.epochs = 5;
  preset.resolve();
  EXPECT_EQ(cfg.snapshot(), preset.snapshot());

  ScratchDir dir("config");
  EXPECT_EQ(kind_of([&] { load_run_config(dir / "missing.toml"); }), ErrorKind::Io);
}

}  // namespace
}  // namespace naref
