#pragma once

#include <vector>

#include <torch/torch.h>

#include "jscc/architecture.hpp"
#include "jscc/primitives.hpp"
#include "jscc/types.hpp"

namespace jscc::motion {

/// Flow values are divided by this before entering the MV encoder and
/// multiplied back after the MV decoder.
inline constexpr double kFlowScale = 4.0;

/// One pyramid level: five convolutions predicting a flow residual from
/// (current frame, warped previous frame, upsampled flow).
class FlowLevelImpl : public torch::nn::Module {
 public:
  explicit FlowLevelImpl(int64_t hidden);
  torch::Tensor forward(const torch::Tensor& input);

  std::vector<nn::ConvLayer> convs;
};
TORCH_MODULE(FlowLevel);

/// Coarse-to-fine optical flow estimator, checkpoint entry `motion.flow`.
class FlowEstimatorImpl : public torch::nn::Module {
 public:
  explicit FlowEstimatorImpl(const ArchTable& arch);
  /// prev, cur: B×3×H×W; returns B×2×H×W such that warp(prev, flow) ≈ cur.
  torch::Tensor forward(const torch::Tensor& prev, const torch::Tensor& cur);

  std::vector<FlowLevel> levels;  // coarsest first
};
TORCH_MODULE(FlowEstimator);

class MvEncoderImpl : public torch::nn::Module {
 public:
  explicit MvEncoderImpl(const ArchTable& arch);
  torch::Tensor forward(const torch::Tensor& flow);

  nn::ResBlockDown down1{nullptr}, down2{nullptr}, down3{nullptr};
  nn::ConvLayer to_latent{nullptr};
};
TORCH_MODULE(MvEncoder);

class MvDecoderImpl : public torch::nn::Module {
 public:
  explicit MvDecoderImpl(const ArchTable& arch);
  torch::Tensor forward(const torch::Tensor& latent);

  nn::ConvLayer from_latent{nullptr}, to_flow{nullptr};
  nn::ResBlockUp up1{nullptr}, up2{nullptr}, up3{nullptr}, up4{nullptr};
};
TORCH_MODULE(MvDecoder);

/// MV_e / MV_d pair, checkpoint entry `motion.mv_codec`.
class MvCodecImpl : public torch::nn::Module {
 public:
  explicit MvCodecImpl(const ArchTable& arch);

  MvEncoder encoder{nullptr};
  MvDecoder decoder{nullptr};
};
TORCH_MODULE(MvCodec);

MotionField estimate_motion(FlowEstimator& estimator, const Frame& prev, const Frame& cur);
Latent mv_encode(MvCodec& codec, const MotionField& flow);
MotionField mv_decode(MvCodec& codec, const Latent& latent);

/// Mean endpoint error between two B×2×H×W flows, optionally restricted to a
/// B×1×H×W {0,1} region.
torch::Tensor endpoint_error(const torch::Tensor& a, const torch::Tensor& b,
                             const torch::Tensor& region = {});

}  // namespace jscc::motion
