#pragma once

#include <torch/torch.h>

#include "jscc/architecture.hpp"
#include "jscc/primitives.hpp"
#include "jscc/types.hpp"

namespace jscc::iframe {

/// F_Ie: four stride-2 stages down to 1/16 resolution.
class EncoderImpl : public torch::nn::Module {
 public:
  explicit EncoderImpl(const ArchTable& arch);
  torch::Tensor forward(const torch::Tensor& x);

  nn::ResBlockDown down1{nullptr}, down2{nullptr}, down3{nullptr};
  nn::DepthConvBlock dc1{nullptr}, dc2{nullptr}, dc3{nullptr};
  nn::ConvLayer to_latent{nullptr};
};
TORCH_MODULE(Encoder);

/// F_Id: mirrors the encoder with upsampling residual blocks and ends in a
/// U-Net. Produces the scale-1 feature f̂ of width C_f.
class DecoderImpl : public torch::nn::Module {
 public:
  explicit DecoderImpl(const ArchTable& arch);
  torch::Tensor forward(const torch::Tensor& latent);

  nn::ConvLayer from_latent{nullptr};
  nn::ResBlockUp up1{nullptr}, up2{nullptr}, up3{nullptr}, up4{nullptr};
  nn::DepthConvBlock dc1{nullptr}, dc2{nullptr};
  nn::UNet unet{nullptr};
};
TORCH_MODULE(Decoder);

/// Feature → frame. Shared by the I- and P-frame decoders.
class RefineImpl : public torch::nn::Module {
 public:
  explicit RefineImpl(int64_t feature_channels);
  torch::Tensor forward(const torch::Tensor& feature);

  nn::ConvLayer conv1{nullptr}, conv2{nullptr}, out{nullptr};
};
TORCH_MODULE(Refine);

/// Encoder-side projector Proj_I: one convolution, frame → propagated feature.
class ProjIImpl : public torch::nn::Module {
 public:
  explicit ProjIImpl(int64_t feature_channels);
  torch::Tensor forward(const torch::Tensor& x);

  nn::ConvLayer conv{nullptr};
};
TORCH_MODULE(ProjI);

/// Checkpoint entry `iframe`: F_Ie, F_Id, Proj_I and the shared Refine.
class IFrameCodecImpl : public torch::nn::Module {
 public:
  explicit IFrameCodecImpl(const ArchTable& arch);

  Encoder encoder{nullptr};
  Decoder decoder{nullptr};
  ProjI proj_i{nullptr};
  Refine refine{nullptr};
};
TORCH_MODULE(IFrameCodec);

Latent iframe_encode(IFrameCodec& codec, const Frame& x);
FeatureMap iframe_decode(IFrameCodec& codec, const Latent& latent);
Frame refine(Refine& refine, const FeatureMap& feature);
FeatureMap proj_i(IFrameCodec& codec, const Frame& x);

}  // namespace jscc::iframe
