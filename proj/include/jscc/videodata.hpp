#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "jscc/types.hpp"

namespace jscc::videodata {

struct FrameSequence {
  std::vector<Frame> frames;
  std::optional<double> frame_rate;

  std::size_t size() const { return frames.size(); }
};

/// One group of pictures. Frame 0 is the I-frame, the rest are P-frames.
struct Gop {
  std::vector<Frame> frames;

  static constexpr std::size_t index_of_iframe() { return 0; }
  std::size_t size() const { return frames.size(); }
};

enum class Layout { kPngFrames, kPlanarYuv420 };

/// Reads `<dir>/frame_%05d.png` (png layout) or `<dir>.yuv` + `<dir>.json`
/// (yuv layout; `path` may name either the .yuv file or its stem).
FrameSequence load_sequence(const std::filesystem::path& path, Layout layout);

/// Writes frames as `<dir>/frame_%05d.png`, numbering from 0.
void write_sequence(const FrameSequence& seq, const std::filesystem::path& dir);

Frame read_png(const std::filesystem::path& file);
void write_png(const Frame& frame, const std::filesystem::path& file);

/// BT.601 full-range conversion of one 8-bit 4:2:0 picture.
Frame yuv420_to_rgb(const std::vector<uint8_t>& y, const std::vector<uint8_t>& u,
                    const std::vector<uint8_t>& v, int width, int height);

std::vector<Gop> slice_gops(const FrameSequence& seq, std::size_t n);

/// Crops the same size×size window out of every frame.
std::vector<Frame> random_crop_pair(const std::vector<Frame>& frames, int64_t size, uint64_t seed);

struct SyntheticClip {
  FrameSequence sequence;
  /// flows[t] maps frame t onto frame t−1 (flows[0] is zero).
  std::vector<MotionField> flows;
};

/// Colored squares translating rigidly over a static smooth texture. The
/// velocity is (dy, dx) in pixels per frame.
SyntheticClip synth_moving_squares(int count, int n_frames, std::pair<int64_t, int64_t> size,
                                   std::pair<double, double> velocity, uint64_t seed);

/// Edge-replication padding up to the next multiple of `multiple`.
torch::Tensor pad_to_multiple(const torch::Tensor& pixels, int64_t multiple = 64);
torch::Tensor crop_to(const torch::Tensor& pixels, int64_t height, int64_t width);

/// Stacks frames into a B×3×H×W batch.
torch::Tensor stack_frames(const std::vector<Frame>& frames);

}  // namespace jscc::videodata
