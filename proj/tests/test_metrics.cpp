#include <cmath>
#include <random>
#include <sstream>

#include <gtest/gtest.h>

#include "jscc/error.hpp"
#include "jscc/metrics.hpp"

using namespace jscc;
using namespace jscc::metrics;

TEST(Psnr, HandValuesAndCap) {
  Frame a{torch::full({3, 16, 16}, 0.5)};
  Frame b{torch::full({3, 16, 16}, 0.6)};
  EXPECT_NEAR(psnr(a, b), 20.0, 1e-4);
  EXPECT_EQ(psnr(a, a), kPsnrCap);
  EXPECT_THROW(psnr(a, Frame{torch::zeros({3, 16, 8})}), Error);
}

TEST(MsSsim, IdentityAndDegradation) {
  torch::manual_seed(3);
  Frame x{torch::rand({3, 96, 96})};
  EXPECT_NEAR(ms_ssim(x, x), 1.0, 1e-9);
  Frame noisy{(x.pixels + 0.05 * torch::randn_like(x.pixels)).clamp(0, 1)};
  Frame noisier{(x.pixels + 0.2 * torch::randn_like(x.pixels)).clamp(0, 1)};
  const double s1 = ms_ssim(x, noisy), s2 = ms_ssim(x, noisier);
  EXPECT_LT(s1, 1.0);
  EXPECT_LT(s2, s1);
  EXPECT_GE(s2, 0.0);
}

TEST(MsSsim, ScalesShrinkForSmallImages) {
  EXPECT_EQ(effective_scales(256, 256, 5), 5);
  EXPECT_EQ(effective_scales(176, 176, 5), 5);
  EXPECT_EQ(effective_scales(64, 64, 5), 3);
  EXPECT_EQ(effective_scales(11, 40, 5), 1);
  EXPECT_THROW(effective_scales(8, 64, 5), Error);
}

TEST(Cbr, QuarterOfChannelsAt256) {
  EXPECT_NEAR(frame_cbr(mem::Mask::first_n(64, 16), 256, 256), 0.020833, 1e-6);
  EXPECT_EQ(frame_cbr(mem::Mask::all(64, false), 256, 256), 0.0);
  EXPECT_THROW(frame_cbr(mem::Mask::all(4, true), 100, 96), Error);
}

TEST(Cbr, MatchesSymbolCounting) {
  std::mt19937 rng(23);
  for (int i = 0; i < 1000; ++i) {
    mem::Mask m{std::vector<uint8_t>(64)};
    for (auto& b : m.bits) b = static_cast<uint8_t>(rng() & 1u);
    const int64_t h = 16 * (1 + static_cast<int64_t>(rng() % 16));
    const int64_t w = 16 * (1 + static_cast<int64_t>(rng() % 16));
    int64_t symbols = 0;
    for (auto b : m.bits) symbols += b ? (h / 16) * (w / 16) : 0;
    EXPECT_DOUBLE_EQ(frame_cbr(m, h, w), static_cast<double>(symbols) / (3.0 * h * w));
  }
}

TEST(Cbr, GopMean) {
  std::vector<FrameStats> s(3);
  s[0].cbr = 0.04;
  s[1].cbr = 0.01;
  s[2].cbr = 0.01;
  EXPECT_NEAR(gop_cbr(s), 0.02, 1e-12);
  EXPECT_THROW(gop_cbr({}), Error);
}

TEST(StatsCsv, HeaderAndRows) {
  FrameStats i;
  i.is_iframe = true;
  i.cbr = i.frame_cbr = 0.5;
  FrameStats p;
  p.frame_index = 1;
  p.cbr = 0.25;
  p.frame_cbr = 0.125;
  p.mv_cbr = 0.125;
  std::ostringstream os;
  write_stats_csv(os, {i, p});
  std::istringstream is(os.str());
  std::string line;
  std::getline(is, line);
  EXPECT_EQ(line, stats_csv_header());
  std::getline(is, line);
  EXPECT_EQ(line.substr(0, 6), "0,I,0.");
  std::getline(is, line);
  EXPECT_EQ(line.substr(0, 18), "1,P,0.25,0.125,0.1");
  EXPECT_FALSE(std::getline(is, line));
}
