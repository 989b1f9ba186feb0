#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "jscc/mem.hpp"
#include "jscc/types.hpp"

namespace jscc::metrics {

inline constexpr double kPsnrCap = 100.0;

struct FrameStats {
  int64_t frame_index = 0;
  bool is_iframe = false;
  double cbr = 0.0;        // frame latent plus, for P-frames, the motion latent
  double frame_cbr = 0.0;  // frame latent only
  double mv_cbr = 0.0;     // motion latent only
  double psnr_db = 0.0;
  double ms_ssim = 0.0;
  int64_t side_channel_bytes = 0;
};

/// RGB PSNR on [0,1], capped at 100 dB.
double psnr(const Frame& x, const Frame& y);

/// Multi-scale SSIM with the canonical five scale weights. The number of
/// scales is reduced (weights renormalized) when the image is too small.
double ms_ssim(const Frame& x, const Frame& y, int scales = 5);

/// Number of scales ms_ssim actually uses for an image of this size.
int effective_scales(int64_t height, int64_t width, int requested);

/// popcount·(H/16)·(W/16) / (3·H·W).
double frame_cbr(const mem::Mask& mask, int64_t height, int64_t width);

/// Symbols per source value for an arbitrary symbol count.
double cbr_from_symbols(int64_t symbols, int64_t height, int64_t width);

/// Mean of the per-frame CBR.
double gop_cbr(const std::vector<FrameStats>& stats);

/// CSV header used by write_stats_csv.
std::string stats_csv_header();
void write_stats_csv(std::ostream& os, const std::vector<FrameStats>& stats);

}  // namespace jscc::metrics
