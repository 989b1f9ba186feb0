#include <fstream>

#include <gtest/gtest.h>

#include "jscc/error.hpp"
#include "jscc/training.hpp"
#include "test_util.hpp"

using namespace jscc;
using namespace jscc::training;
using jscc::testing::compact_arch;

namespace {

torch::Tensor scalar(double v) { return torch::tensor(v, torch::kFloat64); }

TrainConfig tiny(Stage stage, int steps) {
  TrainConfig c;
  c.stage = stage;
  c.steps = steps;
  c.lr = 1e-4;
  c.warmup_steps = 0;
  c.batch_iframe = 1;
  c.batch_pframe = 1;
  c.pframes = 2;
  c.noiseless = true;
  c.log_every = 1;
  return c;
}

ErrorKind kind_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  ADD_FAILURE() << "no error raised";
  return ErrorKind::kInvalidArgument;
}

}  // namespace

TEST(Loss, IFrameHandValue) {
  const auto l = loss_iframe(scalar(0.05), scalar(1e-3), 2e-3);
  EXPECT_NEAR(l.total.item<double>(), 1.1e-3, 1e-12);
  EXPECT_NEAR(l.rate.item<double>(), 1e-4, 1e-12);
}

TEST(Loss, PFrameHandValue) {
  const auto l = loss_pframe(scalar(0.01), scalar(3e-4), scalar(1e-4), 2e-3, 1.5);
  EXPECT_NEAR(l.total.item<double>(), 6.2e-4, 1e-12);
}

TEST(Loss, GopWeightsAndLinearity) {
  const std::vector<double> wt{0.5, 1.2, 0.9, 1.2};
  std::vector<std::pair<torch::Tensor, torch::Tensor>> frames{
      {scalar(0.04), scalar(1e-3)}, {scalar(0.01), scalar(2e-3)}, {scalar(0.02), scalar(4e-3)}};
  const double expected = 1e-2 * 0.07 + 1e-3 + 0.5 * 2e-3 + 1.2 * 4e-3;
  EXPECT_NEAR(loss_gop(frames, 1e-2, wt).item<double>(), expected, 1e-12);
  // Doubling every term doubles the loss.
  for (auto& [r, d] : frames) {
    r = r * 2;
    d = d * 2;
  }
  EXPECT_NEAR(loss_gop(frames, 1e-2, wt).item<double>(), 2 * expected, 1e-12);
  EXPECT_THROW(loss_gop(frames, 1e-2, {0.5}), Error);
}

TEST(TrainConfig, ValidationAndJsonRoundTrip) {
  TrainConfig c;
  c.lambda = 4e-3;
  c.ablation.feature_loss = false;
  c.feature_target = FeatureTarget::kPixelRender;
  const auto back = train_config_from_json(to_json(c));
  EXPECT_EQ(back.lambda, 4e-3);
  EXPECT_FALSE(back.ablation.feature_loss);
  EXPECT_EQ(back.feature_target, FeatureTarget::kPixelRender);
  EXPECT_EQ(back.wt, c.wt);

  auto bad = c;
  bad.lambda = 0;
  EXPECT_EQ(kind_of([&] { validate(bad); }), ErrorKind::kConfig);
  bad = c;
  bad.crop = 100;
  EXPECT_EQ(kind_of([&] { validate(bad); }), ErrorKind::kConfig);
  bad = c;
  bad.pframes = 6;
  EXPECT_EQ(kind_of([&] { validate(bad); }), ErrorKind::kConfig);
}

TEST(Schedule, TemperatureDecays) {
  TrainConfig c;
  c.steps = 101;
  c.entropy_pretrain_fraction = 0.0;
  EXPECT_DOUBLE_EQ(tau_at(c, 0), c.tau_start);
  EXPECT_NEAR(tau_at(c, 100), c.tau_end, 1e-12);
  EXPECT_LT(tau_at(c, 60), tau_at(c, 40));
  c.stage = Stage::kGopFinetune;
  EXPECT_DOUBLE_EQ(tau_at(c, 0), c.tau_end);
}

TEST(Schedule, TrainedEntries) {
  EXPECT_EQ(trained_entries(Stage::kIFrame, true, false), (std::vector<std::string>{"iframe", "mem.iframe"}));
  const auto p = trained_entries(Stage::kPFrame, false, true);
  EXPECT_EQ(std::count(p.begin(), p.end(), "iframe"), 0);
  EXPECT_EQ(std::count(p.begin(), p.end(), "proj_p"), 0);
  EXPECT_EQ(std::count(p.begin(), p.end(), "motion.flow"), 0);
  const auto g = trained_entries(Stage::kGopFinetune, true, false);
  EXPECT_EQ(std::count(g.begin(), g.end(), "iframe"), 1);
  EXPECT_EQ(std::count(g.begin(), g.end(), "motion.flow"), 1);
}

TEST(RunStage, PFrameNeedsIFrameCheckpoint) {
  auto models = make_models(compact_arch(), 1);
  const auto data = synthetic_toy_set(1, 4, 64, 1);
  EXPECT_EQ(kind_of([&] { run_stage(tiny(Stage::kPFrame, 1), data, models); }), ErrorKind::kPrecondition);
  StageIO io;
  io.init_checkpoint = "/nonexistent/iframe.ckpt";
  EXPECT_EQ(kind_of([&] { run_stage(tiny(Stage::kPFrame, 1), data, models, io); }),
            ErrorKind::kPrecondition);
}

TEST(RunStage, ShortStagesWriteArtifactsDeterministically) {
  jscc::testing::TempDir dir("stage");
  const auto data = synthetic_toy_set(2, 4, 64, 3);
  auto run_iframe = [&](const std::string& tag) {
    auto models = make_models(compact_arch(), 1);
    StageIO io;
    io.out_checkpoint = dir.path() / (tag + ".ckpt");
    io.curve_csv = dir.path() / (tag + ".csv");
    return run_stage(tiny(Stage::kIFrame, 4), data, models, io);
  };
  const auto a = run_iframe("a");
  const auto b = run_iframe("b");
  ASSERT_EQ(a.curve.size(), 4u);
  for (std::size_t i = 0; i < a.curve.size(); ++i) EXPECT_EQ(a.curve[i].total, b.curve[i].total);
  EXPECT_EQ(checkpoint::read_metadata(dir.path() / "a.ckpt").stage, "iframe");

  std::ifstream csv(dir.path() / "a.csv");
  std::string header;
  std::getline(csv, header);
  EXPECT_EQ(header, "step,rate,frame_distortion,feature_distortion,entropy_nll,total,tau,mean_keep");

  // A GOP stage refuses an I-frame checkpoint, a P-frame stage accepts it.
  auto models = make_models(compact_arch(), 1);
  StageIO gop_io;
  gop_io.init_checkpoint = dir.path() / "a.ckpt";
  EXPECT_EQ(kind_of([&] { run_stage(tiny(Stage::kGopFinetune, 1), data, models, gop_io); }),
            ErrorKind::kPrecondition);
  StageIO p_io;
  p_io.init_checkpoint = dir.path() / "a.ckpt";
  p_io.out_checkpoint = dir.path() / "p.ckpt";
  const auto p = run_stage(tiny(Stage::kPFrame, 2), data, models, p_io);
  ASSERT_EQ(p.curve.size(), 2u);
  EXPECT_TRUE(std::isfinite(p.curve.back().total));
  EXPECT_EQ(checkpoint::read_metadata(dir.path() / "p.ckpt").stage, "pframe");
}
