#include <fstream>

#include <gtest/gtest.h>

#include "jscc/error.hpp"
#include "jscc/gop_pipeline.hpp"
#include "jscc/models.hpp"
#include "test_util.hpp"

using namespace jscc;
using jscc::testing::compact_arch;

namespace {

videodata::FrameSequence moving_clip(int frames, int64_t h = 64, int64_t w = 64) {
  return videodata::synth_moving_squares(2, frames, {h, w}, {1.0, 2.0}, 7).sequence;
}

channel::ChannelConfig awgn(double db) {
  channel::ChannelConfig c;
  c.csnr_db = db;
  return c;
}

}  // namespace

TEST(Pipeline, GopStatsAndShapes) {
  auto models = make_models(compact_arch(), 1);
  const auto seq = moving_clip(3);
  const auto r = pipeline::transmit_gop({seq.frames}, models, awgn(10.0), 4);
  ASSERT_EQ(r.stats.size(), 3u);
  ASSERT_EQ(r.reconstructions.size(), 3u);
  EXPECT_TRUE(r.stats[0].is_iframe);
  EXPECT_EQ(r.stats[0].mv_cbr, 0.0);
  for (std::size_t t = 0; t < 3; ++t) {
    const auto& s = r.stats[t];
    EXPECT_EQ(s.frame_index, static_cast<int64_t>(t));
    EXPECT_EQ(r.reconstructions[t].pixels.sizes(), seq.frames[t].pixels.sizes());
    EXPECT_GE(r.reconstructions[t].pixels.min().item<double>(), 0.0);
    EXPECT_LE(r.reconstructions[t].pixels.max().item<double>(), 1.0);
    EXPECT_NEAR(s.cbr, s.frame_cbr + s.mv_cbr, 1e-12);
    EXPECT_LE(s.frame_cbr, 32.0 / 768.0 + 1e-12);
    if (t > 0) EXPECT_FALSE(s.is_iframe);
  }
  EXPECT_EQ(r.stats[0].side_channel_bytes, 12);
  EXPECT_EQ(r.stats[1].side_channel_bytes, 12 + 10);
}

TEST(Pipeline, PaddedFramesCountAgainstSourceSize) {
  auto models = make_models(compact_arch(), 1);
  const auto seq = moving_clip(2, 48, 80);
  const auto r = pipeline::transmit_gop({seq.frames}, models, awgn(10.0), 4);
  EXPECT_EQ(r.reconstructions[0].height(), 48);
  EXPECT_EQ(r.reconstructions[0].width(), 80);
  // The padded latent grid is 4×8 = 32 positions per channel.
  const double per_channel = 32.0 / (3.0 * 48 * 80);
  const double channels = r.stats[0].frame_cbr / per_channel;
  EXPECT_NEAR(channels, std::round(channels), 1e-9);
}

TEST(Pipeline, EncoderIsNoiseInvariantDecoderIsNot) {
  auto models = make_models(compact_arch(), 2);
  const videodata::Gop gop{moving_clip(3).frames};
  EXPECT_TRUE(pipeline::encoder_outputs_noise_invariant(gop, models, awgn(0.0), {1, 2}));
  const auto a = pipeline::transmit_gop(gop, models, awgn(0.0), 1);
  const auto b = pipeline::transmit_gop(gop, models, awgn(0.0), 2);
  const auto c = pipeline::transmit_gop(gop, models, awgn(0.0), 1);
  EXPECT_FALSE(torch::equal(a.reconstructions[2].pixels, b.reconstructions[2].pixels));
  EXPECT_TRUE(torch::equal(a.reconstructions[2].pixels, c.reconstructions[2].pixels));
}

TEST(Pipeline, NoiselessChannelIgnoresSeed) {
  auto models = make_models(compact_arch(), 2);
  const videodata::Gop gop{moving_clip(2).frames};
  auto ch = awgn(0.0);
  ch.noiseless = true;
  const auto a = pipeline::transmit_gop(gop, models, ch, 1);
  const auto b = pipeline::transmit_gop(gop, models, ch, 2);
  EXPECT_TRUE(torch::equal(a.reconstructions[1].pixels, b.reconstructions[1].pixels));
}

TEST(Pipeline, GopLengthOneIsAllIFrames) {
  auto models = make_models(compact_arch(), 3);
  const auto r = pipeline::transmit_sequence(moving_clip(3), models, awgn(10.0), 1, 0);
  ASSERT_EQ(r.stats.size(), 3u);
  for (std::size_t t = 0; t < 3; ++t) {
    EXPECT_TRUE(r.stats[t].is_iframe);
    EXPECT_EQ(r.stats[t].frame_index, static_cast<int64_t>(t));
  }
}

TEST(Pipeline, SequenceSlicesIntoGops) {
  auto models = make_models(compact_arch(), 3);
  const auto r = pipeline::transmit_sequence(moving_clip(5), models, awgn(10.0), 2, 0);
  ASSERT_EQ(r.stats.size(), 5u);
  const std::vector<bool> expected{true, false, true, false, true};
  for (std::size_t t = 0; t < 5; ++t) {
    EXPECT_EQ(r.stats[t].is_iframe, expected[t]) << t;
    EXPECT_EQ(r.stats[t].frame_index, static_cast<int64_t>(t));
  }
}

TEST(Pipeline, FixedWidthWhenMemDisabled) {
  auto models = make_models(compact_arch(), 4);
  pipeline::PipelineOptions opts;
  opts.ablation.mem_enabled = false;
  const auto r = pipeline::transmit_gop({moving_clip(3).frames}, models, awgn(10.0), 0, opts);
  for (const auto& s : r.stats) EXPECT_NEAR(s.frame_cbr, 32.0 / 768.0, 1e-12);
}

TEST(Pipeline, TrainingUnrollCarriesLosses) {
  auto models = make_models(compact_arch(), 5);
  std::vector<torch::Tensor> frames;
  for (const auto& f : moving_clip(3).frames) frames.push_back(f.pixels.unsqueeze(0));
  pipeline::PipelineOptions opts;
  opts.training = true;
  const auto out = pipeline::unroll(models, frames, awgn(10.0), opts);
  ASSERT_EQ(out.size(), 3u);
  for (const auto& o : out) {
    ASSERT_TRUE(o.rate_soft.defined());
    ASSERT_TRUE(o.entropy_nll.defined());
    EXPECT_TRUE(o.x_hat.requires_grad());
    EXPECT_EQ(o.x_hat.sizes(), frames[0].sizes());
  }
  EXPECT_TRUE(out[1].mv.y_hat.defined());
}

TEST(PayloadArchive, RoundTrip) {
  jscc::testing::TempDir dir("archive");
  auto models = make_models(compact_arch(), 6);
  const auto r = pipeline::transmit_gop({moving_clip(2).frames}, models, awgn(10.0), 1);
  ASSERT_EQ(r.payloads.size(), 3u);
  const auto file = dir.path() / "p.bin";
  pipeline::write_payload_archive(file, r.payloads);
  const auto back = pipeline::read_payload_archive(file);
  ASSERT_EQ(back.size(), r.payloads.size());
  for (std::size_t i = 0; i < back.size(); ++i) {
    EXPECT_EQ(back[i].frame_index, r.payloads[i].frame_index);
    EXPECT_EQ(back[i].stream, r.payloads[i].stream);
    EXPECT_EQ(back[i].mask_bytes, r.payloads[i].mask_bytes);
    EXPECT_EQ(back[i].symbols, r.payloads[i].symbols);
    const auto mask = mem::deserialize_mask(back[i].mask_bytes);
    EXPECT_EQ(back[i].symbols.size(), static_cast<std::size_t>(mask.popcount() * 16));
  }
  std::filesystem::resize_file(file, std::filesystem::file_size(file) - 3);
  EXPECT_THROW(pipeline::read_payload_archive(file), Error);
}

TEST(Checkpoint, RoundTripReproducesOutputs) {
  jscc::testing::TempDir dir("ckpt");
  auto models = make_models(compact_arch(), 7);
  nlohmann::json cfg{{"lambda", 0.01}};
  checkpoint::save(dir.path() / "m.ckpt", models, "iframe", cfg);
  const auto meta = checkpoint::read_metadata(dir.path() / "m.ckpt");
  EXPECT_EQ(meta.stage, "iframe");
  EXPECT_EQ(meta.arch.latent_channels, 32);
  EXPECT_EQ(meta.schema_version, checkpoint::kSchemaVersion);
  auto loaded = checkpoint::load_models(dir.path() / "m.ckpt");
  const videodata::Gop gop{moving_clip(2).frames};
  const auto a = pipeline::transmit_gop(gop, models, awgn(10.0), 3);
  const auto b = pipeline::transmit_gop(gop, loaded, awgn(10.0), 3);
  EXPECT_TRUE(torch::equal(a.reconstructions[1].pixels, b.reconstructions[1].pixels));
}

TEST(Checkpoint, MissingAndCorruptFiles) {
  jscc::testing::TempDir dir("ckpt_bad");
  EXPECT_THROW(checkpoint::read_metadata(dir.path() / "none.ckpt"), Error);
  {
    std::ofstream os(dir.path() / "bad.ckpt", std::ios::binary);
    os << "NOTACKPT";
  }
  EXPECT_THROW(checkpoint::read_metadata(dir.path() / "bad.ckpt"), Error);
}
