#include <cstdlib>
#include <fstream>

#include <gtest/gtest.h>

#include "jscc/config.hpp"
#include "jscc/error.hpp"
#include "test_util.hpp"

using namespace jscc;
using jscc::testing::TempDir;

namespace {

ErrorKind kind_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  ADD_FAILURE() << "no error raised";
  return ErrorKind::kInvalidArgument;
}

const char* kTinyYaml = R"(seed: 3
gop: 3
arch:
  latent_channels: 32
  mv_latent_channels: 16
  feature_channels: 16
  frame_widths: [24, 32, 48]
  mv_widths: [8, 16, 16]
  hyper_channels: 8
  entropy_width: 32
  temporal_prior_channels: 16
  offset_groups: 2
  offset_hidden: 16
  flow_hidden: 16
  policy_hidden: 16
train:
  batch_iframe: 1
  batch_pframe: 1
  crop: 64
  pframes: 2
  warmup_steps: 0
  steps: {iframe: 2, pframe: 2, gop_finetune: 2}
channel: {kind: awgn, csnr_db: 5}
data:
  synthetic: {clips: 1, frames: 3, size: 64}
flops: {height: 64, width: 64}
)";

int run_cli(const std::string& args, const std::filesystem::path& log) {
  const std::string cmd = std::string(JSCC_CLI_PATH) + " " + args + " > " + log.string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream is(p);
  return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST(Config, DefaultsFromEmptyText) {
  const auto c = config::parse("");
  EXPECT_EQ(c.gop, 4u);
  EXPECT_EQ(c.arch.latent_channels, 64);
  EXPECT_EQ(c.train.lambda, 2e-3);
  EXPECT_EQ(c.eval_checkpoint(), std::filesystem::path("runs/default") / "gop_finetune.ckpt");
  EXPECT_EQ(c.stage_checkpoint(training::Stage::kIFrame), std::filesystem::path("runs/default") / "iframe.ckpt");
}

TEST(Config, ValuesAreMirrored) {
  const auto c = config::parse("seed: 9\nchannel: {kind: rayleigh, csnr_db: 3, noiseless: true}\n");
  EXPECT_EQ(c.train.seed, 9u);
  EXPECT_EQ(c.channel.seed, 9u);
  EXPECT_EQ(c.train.csnr_db, 3.0);
  EXPECT_EQ(c.train.channel, channel::Kind::kRayleigh);
  EXPECT_TRUE(c.train.noiseless);
}

TEST(Config, UnknownKeysAndBadValuesRejected) {
  EXPECT_EQ(kind_of([] { config::parse("train:\n  lamda: 0.01\n"); }), ErrorKind::kConfig);
  try {
    config::parse("train:\n  lamda: 0.01\n");
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("train.lamda"), std::string::npos) << e.what();
  }
  EXPECT_EQ(kind_of([] { config::parse("gop: four\n"); }), ErrorKind::kConfig);
  EXPECT_EQ(kind_of([] { config::parse("arch: {frame_widths: [1, 2]}\n"); }), ErrorKind::kConfig);
  EXPECT_EQ(kind_of([] { config::load("/nonexistent/run.yaml"); }), ErrorKind::kConfig);
  auto c = config::parse("");
  c.gop = 0;
  EXPECT_EQ(kind_of([&] { config::validate(c); }), ErrorKind::kConfig);
}

TEST(Config, EffectiveYamlRoundTrips) {
  const auto c = config::parse(kTinyYaml);
  const auto again = config::parse(config::to_yaml(c));
  EXPECT_EQ(config::to_yaml(again), config::to_yaml(c));
  EXPECT_EQ(again.steps.pframe, 2);
  EXPECT_EQ(again.arch.frame_widths, c.arch.frame_widths);
}

TEST(Config, ShippedConfigsParse) {
  for (const char* name : {"default.yaml", "smoke.yaml"}) {
    const auto c = config::load(std::filesystem::path(JSCC_SOURCE_DIR) / "configs" / name);
    EXPECT_NO_THROW(config::validate(c)) << name;
  }
}

TEST(Config, SyntheticSetsUseDistinctSeeds) {
  const auto c = config::parse(kTinyYaml);
  const auto train = config::load_train_set(c);
  const auto eval = config::load_eval_set(c);
  ASSERT_EQ(train.clips.size(), 1u);
  ASSERT_EQ(eval.size(), 1u);
  EXPECT_FALSE(torch::equal(train.clips[0].frames[0].pixels, eval[0].frames[0].pixels));
}

TEST(Cli, UsageErrorsExitTwo) {
  TempDir dir("cli_usage");
  EXPECT_EQ(run_cli("", dir.path() / "a.log"), 2);
  EXPECT_EQ(run_cli("eval --config /nonexistent.yaml", dir.path() / "b.log"), 2);
  EXPECT_NE(slurp(dir.path() / "b.log").find("error"), std::string::npos);
  EXPECT_EQ(run_cli("train-pframe --out " + (dir.path() / "run").string(), dir.path() / "c.log"), 2);
  EXPECT_NE(slurp(dir.path() / "c.log").find("iframe.ckpt"), std::string::npos);
  EXPECT_EQ(run_cli("--help", dir.path() / "d.log"), 0);
}

TEST(Cli, TinyRunEndToEnd) {
  TempDir dir("cli_run");
  const auto cfg = dir.path() / "tiny.yaml";
  std::ofstream(cfg) << kTinyYaml;
  const auto out = dir.path() / "run";
  const std::string common = "--config " + cfg.string() + " --out " + out.string();
  for (const char* cmd : {"train-iframe", "train-pframe", "finetune-gop", "eval", "flops"}) {
    EXPECT_EQ(run_cli(std::string(cmd) + " " + common, dir.path() / "log.txt"), 0)
        << cmd << ":\n" << slurp(dir.path() / "log.txt");
  }
  for (const char* f : {"effective_config.yaml", "iframe.ckpt", "pframe.ckpt", "gop_finetune.ckpt",
                        "iframe_curve.csv", "eval_summary.csv", "trace_0.csv", "flops.csv"}) {
    EXPECT_TRUE(std::filesystem::exists(out / f)) << f;
  }

  const auto seq = videodata::synth_moving_squares(1, 3, {64, 64}, {1, 0}, 5).sequence;
  videodata::write_sequence(seq, dir.path() / "clip");
  EXPECT_EQ(run_cli("transmit " + common + " --archive --input " + (dir.path() / "clip").string(),
                    dir.path() / "log.txt"),
            0)
      << slurp(dir.path() / "log.txt");
  EXPECT_TRUE(std::filesystem::exists(out / "recon" / "frame_00002.png"));
  EXPECT_TRUE(std::filesystem::exists(out / "stats.csv"));
  EXPECT_TRUE(std::filesystem::exists(out / "payloads.bin"));
}
