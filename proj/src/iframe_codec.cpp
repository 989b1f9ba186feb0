#include "jscc/iframe_codec.hpp"

#include "jscc/error.hpp"

namespace jscc::iframe {

using nn::leaky;

EncoderImpl::EncoderImpl(const ArchTable& arch) {
  const auto [w1, w2, w3] = arch.frame_widths;
  down1 = register_module("down1", nn::ResBlockDown(3, w1));
  dc1 = register_module("dc1", nn::DepthConvBlock(w1, w1));
  down2 = register_module("down2", nn::ResBlockDown(w1, w2));
  dc2 = register_module("dc2", nn::DepthConvBlock(w2, w2));
  down3 = register_module("down3", nn::ResBlockDown(w2, w3));
  dc3 = register_module("dc3", nn::DepthConvBlock(w3, w3));
  to_latent = register_module("to_latent", nn::ConvLayer(w3, arch.latent_channels, 3, 2));
}

torch::Tensor EncoderImpl::forward(const torch::Tensor& x) {
  require(x.size(2) % 16 == 0 && x.size(3) % 16 == 0, ErrorKind::kShapeMismatch,
          "I-frame encoder needs sizes divisible by 16 (pad the frame first)");
  auto h = dc1->forward(down1->forward(x));
  h = dc2->forward(down2->forward(h));
  h = dc3->forward(down3->forward(h));
  return to_latent->forward(h);
}

DecoderImpl::DecoderImpl(const ArchTable& arch) {
  const auto [w1, w2, w3] = arch.frame_widths;
  from_latent = register_module("from_latent", nn::ConvLayer(arch.latent_channels, w3, 3));
  up1 = register_module("up1", nn::ResBlockUp(w3, w3));
  dc1 = register_module("dc1", nn::DepthConvBlock(w3, w3));
  up2 = register_module("up2", nn::ResBlockUp(w3, w2));
  dc2 = register_module("dc2", nn::DepthConvBlock(w2, w2));
  up3 = register_module("up3", nn::ResBlockUp(w2, w1));
  up4 = register_module("up4", nn::ResBlockUp(w1, arch.feature_channels));
  unet = register_module("unet", nn::UNet(arch.feature_channels));
}

torch::Tensor DecoderImpl::forward(const torch::Tensor& latent) {
  auto h = leaky(from_latent->forward(latent));
  h = dc1->forward(up1->forward(h));
  h = dc2->forward(up2->forward(h));
  h = up4->forward(up3->forward(h));
  return unet->forward(h);
}

RefineImpl::RefineImpl(int64_t c) {
  conv1 = register_module("conv1", nn::ConvLayer(c, c, 3));
  conv2 = register_module("conv2", nn::ConvLayer(c, c, 3));
  out = register_module("out", nn::ConvLayer(c, 3, 3));
  torch::NoGradGuard guard;
  out->bias.fill_(0.5);
}

torch::Tensor RefineImpl::forward(const torch::Tensor& feature) {
  auto h = feature + conv2->forward(leaky(conv1->forward(feature)));
  return nn::clamp_unit_ste(out->forward(leaky(h)));
}

ProjIImpl::ProjIImpl(int64_t c) { conv = register_module("conv", nn::ConvLayer(3, c, 3)); }

torch::Tensor ProjIImpl::forward(const torch::Tensor& x) { return conv->forward(x); }

IFrameCodecImpl::IFrameCodecImpl(const ArchTable& arch) {
  encoder = register_module("encoder", Encoder(arch));
  decoder = register_module("decoder", Decoder(arch));
  proj_i = register_module("proj_i", ProjI(arch.feature_channels));
  refine = register_module("refine", Refine(arch.feature_channels));
}

Latent iframe_encode(IFrameCodec& codec, const Frame& x) {
  return Latent{codec->encoder->forward(x.pixels.unsqueeze(0)), LatentKind::kFrame};
}

FeatureMap iframe_decode(IFrameCodec& codec, const Latent& latent) {
  return FeatureMap{codec->decoder->forward(latent.values), 1};
}

Frame refine(Refine& refine, const FeatureMap& feature) {
  require(feature.scale == 1, ErrorKind::kShapeMismatch, "refine expects a scale-1 feature");
  return Frame{refine->forward(feature.values).squeeze(0)};
}

FeatureMap proj_i(IFrameCodec& codec, const Frame& x) {
  return FeatureMap{codec->proj_i->forward(x.pixels.unsqueeze(0)), 1};
}

}  // namespace jscc::iframe
