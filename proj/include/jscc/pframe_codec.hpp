#pragma once

#include <torch/torch.h>

#include "jscc/architecture.hpp"
#include "jscc/primitives.hpp"
#include "jscc/types.hpp"

namespace jscc::pframe {

/// F_Pe: the four-stage analysis stack with C¹/C²/C³ concatenated at the
/// stages whose resolution they match.
class EncoderImpl : public torch::nn::Module {
 public:
  explicit EncoderImpl(const ArchTable& arch);
  torch::Tensor forward(const torch::Tensor& x, const ContextSet& ctx);

  nn::ResBlockDown down1{nullptr}, down2{nullptr}, down3{nullptr};
  nn::DepthConvBlock dc3{nullptr};
  nn::ConvLayer to_latent{nullptr};
};
TORCH_MODULE(Encoder);

/// Conditional synthesis with sub-pixel upsampling and two U-Nets. Used as
/// F_Pd at the decoder and, with its own weights, as Proj_P at the encoder.
class SynthesisImpl : public torch::nn::Module {
 public:
  explicit SynthesisImpl(const ArchTable& arch);
  torch::Tensor forward(const torch::Tensor& latent, const ContextSet& ctx);

  nn::ConvLayer from_latent{nullptr};
  nn::ResBlockUp up1{nullptr}, up2{nullptr}, up3{nullptr}, up4{nullptr};
  nn::ConvLayer merge3{nullptr}, merge2{nullptr}, merge1{nullptr};
  nn::DepthConvBlock dc{nullptr};
  nn::UNet unet_half{nullptr}, unet_full{nullptr};
};
TORCH_MODULE(Synthesis);

/// Checkpoint entry `pframe`: F_Pe and F_Pd.
class PFrameCodecImpl : public torch::nn::Module {
 public:
  explicit PFrameCodecImpl(const ArchTable& arch);

  Encoder encoder{nullptr};
  Synthesis decoder{nullptr};
};
TORCH_MODULE(PFrameCodec);

/// Encoder-side state or decoder-side state, never mixed: the encoder holds
/// the ground-truth previous frame, the decoder its reconstruction.
struct CodecState {
  torch::Tensor prev_frame;    // B×3×H×W
  torch::Tensor prev_feature;  // B×C_f×H×W
};

Latent pframe_encode(PFrameCodec& codec, const Frame& x, const ContextSet& ctx);
FeatureMap pframe_decode(PFrameCodec& codec, const Latent& latent, const ContextSet& ctx);
FeatureMap proj_p(Synthesis& proj, const Latent& latent, const ContextSet& ctx);

}  // namespace jscc::pframe
