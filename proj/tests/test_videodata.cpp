#include <fstream>

#include <gtest/gtest.h>

#include "jscc/error.hpp"
#include "jscc/videodata.hpp"
#include "test_util.hpp"

using namespace jscc;
using jscc::testing::TempDir;

namespace {

videodata::FrameSequence random_sequence(int n, int64_t h, int64_t w) {
  videodata::FrameSequence seq;
  torch::manual_seed(3);
  for (int i = 0; i < n; ++i) seq.frames.push_back(Frame{torch::rand({3, h, w})});
  return seq;
}

}  // namespace

TEST(LoadSequence, ReadsNumberedPngs) {
  TempDir dir("png");
  videodata::write_sequence(random_sequence(7, 16, 24), dir.path());
  auto seq = videodata::load_sequence(dir.path(), videodata::Layout::kPngFrames);
  ASSERT_EQ(seq.size(), 7u);
  EXPECT_EQ(seq.frames[0].height(), 16);
  EXPECT_EQ(seq.frames[0].width(), 24);
}

TEST(LoadSequence, PngRoundTripWithinOneLevel) {
  TempDir dir("png_rt");
  auto seq = random_sequence(2, 8, 8);
  videodata::write_sequence(seq, dir.path());
  auto back = videodata::load_sequence(dir.path(), videodata::Layout::kPngFrames);
  for (std::size_t i = 0; i < seq.size(); ++i) {
    const double err = (back.frames[i].pixels - seq.frames[i].pixels).abs().max().item<double>();
    EXPECT_LE(err, 1.0 / 255.0 + 1e-6);
  }
}

TEST(LoadSequence, BlackPngIsZeros) {
  TempDir dir("black");
  videodata::write_png(Frame{torch::zeros({3, 8, 8})}, dir.path() / "frame_00000.png");
  auto seq = videodata::load_sequence(dir.path(), videodata::Layout::kPngFrames);
  ASSERT_EQ(seq.size(), 1u);
  EXPECT_EQ(seq.frames[0].pixels.abs().max().item<float>(), 0.0f);
}

TEST(LoadSequence, MidGreyYuv) {
  TempDir dir("yuv");
  const int w = 4, h = 2;
  {
    std::ofstream yuv(dir.path() / "grey.yuv", std::ios::binary);
    std::vector<char> bytes(w * h + 2 * (w / 2) * (h / 2), static_cast<char>(128));
    yuv.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    std::ofstream meta(dir.path() / "grey.json");
    meta << R"({"width": 4, "height": 2, "frames": 1})";
  }
  auto seq = videodata::load_sequence(dir.path() / "grey.yuv", videodata::Layout::kPlanarYuv420);
  ASSERT_EQ(seq.size(), 1u);
  auto px = seq.frames[0].pixels;
  EXPECT_NEAR(px.min().item<double>(), 128.0 / 255.0, 1e-4);
  EXPECT_NEAR(px.max().item<double>(), 128.0 / 255.0, 1e-4);
}

TEST(LoadSequence, MissingDirectoryIsStructuredError) {
  try {
    videodata::load_sequence("/nonexistent/sequence", videodata::Layout::kPngFrames);
    FAIL() << "expected an error";
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("/nonexistent/sequence"), std::string::npos);
  }
}

TEST(LoadSequence, InconsistentResolutionNamesFile) {
  TempDir dir("mixed");
  videodata::write_png(Frame{torch::zeros({3, 8, 8})}, dir.path() / "frame_00000.png");
  videodata::write_png(Frame{torch::zeros({3, 8, 16})}, dir.path() / "frame_00001.png");
  try {
    videodata::load_sequence(dir.path(), videodata::Layout::kPngFrames);
    FAIL() << "expected an error";
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("frame_00001.png"), std::string::npos);
  }
}

TEST(SliceGops, EvenAndRemainder) {
  auto sizes = [](int frames, std::size_t n) {
    std::vector<std::size_t> out;
    for (const auto& g : videodata::slice_gops(random_sequence(frames, 4, 4), n)) out.push_back(g.size());
    return out;
  };
  EXPECT_EQ(sizes(8, 4), (std::vector<std::size_t>{4, 4}));
  EXPECT_EQ(sizes(7, 4), (std::vector<std::size_t>{4, 3}));
  EXPECT_EQ(sizes(50, 10).size(), 5u);
}

TEST(SliceGops, PreservesOrder) {
  auto seq = random_sequence(7, 4, 4);
  auto gops = videodata::slice_gops(seq, 3);
  std::size_t k = 0;
  for (const auto& g : gops) {
    for (const auto& f : g.frames) EXPECT_TRUE(torch::equal(f.pixels, seq.frames[k++].pixels));
  }
  EXPECT_EQ(k, seq.size());
}

TEST(RandomCrop, IdentityAtFullSize) {
  auto seq = random_sequence(2, 256, 256);
  auto crops = videodata::random_crop_pair(seq.frames, 256, 5);
  EXPECT_TRUE(torch::equal(crops[0].pixels, seq.frames[0].pixels));
}

TEST(RandomCrop, DeterministicSharedWindow) {
  // Every frame is constant along its own index so the window offsets can be
  // compared through a per-frame shift.
  std::vector<Frame> frames;
  auto ramp = torch::arange(300 * 320, torch::kFloat32).reshape({1, 300, 320}) / (300.0 * 320.0);
  for (int i = 0; i < 7; ++i) frames.push_back(Frame{ramp.expand({3, 300, 320}).clone()});
  auto a = videodata::random_crop_pair(frames, 256, 11);
  auto b = videodata::random_crop_pair(frames, 256, 11);
  ASSERT_EQ(a.size(), 7u);
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_TRUE(torch::equal(a[i].pixels, b[i].pixels));
    EXPECT_TRUE(torch::equal(a[i].pixels, a[0].pixels));
  }
}

TEST(RandomCrop, UndersizedIsError) {
  auto seq = random_sequence(1, 64, 64);
  EXPECT_THROW(videodata::random_crop_pair(seq.frames, 256, 1), Error);
}

TEST(SynthSquares, StaticClipIsConstant) {
  auto clip = videodata::synth_moving_squares(3, 5, {64, 64}, {0, 0}, 7);
  for (const auto& f : clip.sequence.frames) {
    EXPECT_TRUE(torch::equal(f.pixels, clip.sequence.frames[0].pixels));
  }
}

TEST(SynthSquares, ShiftAndFlowInsideSquare) {
  auto clip = videodata::synth_moving_squares(1, 3, {64, 64}, {0, 1}, 2);
  const auto& f0 = clip.sequence.frames[0].pixels;
  const auto& f1 = clip.sequence.frames[1].pixels;
  // The backward flow of frame 1 points at the previous position: flow = -velocity.
  auto flow = clip.flows[1].flow;
  auto moving = flow.abs().sum(0) > 0;
  ASSERT_GT(moving.sum().item<int64_t>(), 0);
  auto dx = flow[0].masked_select(moving);
  auto dy = flow[1].masked_select(moving);
  EXPECT_TRUE(torch::all(dx == -1.0).item<bool>());
  EXPECT_TRUE(torch::all(dy == 0.0).item<bool>());
  // Inside the square, frame 1 at x equals frame 0 at x - 1.
  auto idx = moving.nonzero();
  for (int64_t k = 0; k < idx.size(0); k += 7) {
    const auto y = idx[k][0].item<int64_t>(), x = idx[k][1].item<int64_t>();
    EXPECT_TRUE(torch::equal(f1.index({torch::indexing::Slice(), y, x}),
                             f0.index({torch::indexing::Slice(), y, x - 1})));
  }
}

TEST(Padding, ReplicatesEdgesToMultiple) {
  auto x = torch::rand({1, 3, 70, 100});
  auto p = videodata::pad_to_multiple(x, 64);
  EXPECT_EQ(p.size(2), 128);
  EXPECT_EQ(p.size(3), 128);
  EXPECT_TRUE(torch::equal(videodata::crop_to(p, 70, 100), x));
}
