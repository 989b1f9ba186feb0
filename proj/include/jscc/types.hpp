#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <vector>

namespace jscc {

/// Pixel-domain frame: 3×H×W float32, values in [0,1].
struct Frame {
  torch::Tensor pixels;

  int64_t height() const { return pixels.size(-2); }
  int64_t width() const { return pixels.size(-1); }
};

/// Dense displacement field, 2×H×W (or B×2×H×W inside the networks).
/// Channel 0 is dx, channel 1 is dy, in pixels. A pixel p of frame t is
/// predicted from frame t−1 at position p + flow(p).
struct MotionField {
  torch::Tensor flow;
};

struct FeatureMap {
  torch::Tensor values;
  int scale = 1;  // downsampling factor relative to the frame
};

enum class LatentKind { kFrame, kMotion };

/// Codec latent at 1/16 of the (padded) frame resolution, B×C×h×w.
struct Latent {
  torch::Tensor values;
  LatentKind kind = LatentKind::kFrame;

  int64_t channels() const { return values.size(1); }
};

/// Multi-scale conditions: c1 at full resolution, c2 at 1/2, c3 at 1/4.
struct ContextSet {
  torch::Tensor c1;
  torch::Tensor c2;
  torch::Tensor c3;
};

}  // namespace jscc
