#include "jscc/pframe_codec.hpp"

#include "jscc/error.hpp"

namespace jscc::pframe {

using nn::leaky;

namespace {

void check_context(const torch::Tensor& at_scale, const torch::Tensor& ctx, const char* name) {
  require(at_scale.size(2) == ctx.size(2) && at_scale.size(3) == ctx.size(3),
          ErrorKind::kShapeMismatch, std::string("P-frame codec: context ") + name +
                                         " does not match the stage resolution");
}

}  // namespace

EncoderImpl::EncoderImpl(const ArchTable& arch) {
  const auto [w1, w2, w3] = arch.frame_widths;
  const auto c = arch.feature_channels;
  down1 = register_module("down1", nn::ResBlockDown(3 + c, w1));
  down2 = register_module("down2", nn::ResBlockDown(w1 + 2 * c, w2));
  down3 = register_module("down3", nn::ResBlockDown(w2 + 4 * c, w3));
  dc3 = register_module("dc3", nn::DepthConvBlock(w3, w3));
  to_latent = register_module("to_latent", nn::ConvLayer(w3, arch.latent_channels, 3, 2));
}

torch::Tensor EncoderImpl::forward(const torch::Tensor& x, const ContextSet& ctx) {
  check_context(x, ctx.c1, "C1");
  auto h = down1->forward(torch::cat({x, ctx.c1}, 1));
  check_context(h, ctx.c2, "C2");
  h = down2->forward(torch::cat({h, ctx.c2}, 1));
  check_context(h, ctx.c3, "C3");
  h = dc3->forward(down3->forward(torch::cat({h, ctx.c3}, 1)));
  return to_latent->forward(h);
}

SynthesisImpl::SynthesisImpl(const ArchTable& arch) {
  const auto [w1, w2, w3] = arch.frame_widths;
  const auto c = arch.feature_channels;
  from_latent = register_module("from_latent", nn::ConvLayer(arch.latent_channels, w3, 3));
  up1 = register_module("up1", nn::ResBlockUp(w3, w3));
  up2 = register_module("up2", nn::ResBlockUp(w3, w2));
  merge3 = register_module("merge3", nn::ConvLayer(w2 + 4 * c, w2, 1));
  dc = register_module("dc", nn::DepthConvBlock(w2, w2));
  up3 = register_module("up3", nn::ResBlockUp(w2, w1));
  merge2 = register_module("merge2", nn::ConvLayer(w1 + 2 * c, w1, 1));
  unet_half = register_module("unet_half", nn::UNet(w1));
  up4 = register_module("up4", nn::ResBlockUp(w1, c));
  merge1 = register_module("merge1", nn::ConvLayer(2 * c, c, 3));
  unet_full = register_module("unet_full", nn::UNet(c));
}

torch::Tensor SynthesisImpl::forward(const torch::Tensor& latent, const ContextSet& ctx) {
  auto h = up2->forward(up1->forward(leaky(from_latent->forward(latent))));
  check_context(h, ctx.c3, "C3");
  h = dc->forward(leaky(merge3->forward(torch::cat({h, ctx.c3}, 1))));
  h = up3->forward(h);
  check_context(h, ctx.c2, "C2");
  h = unet_half->forward(leaky(merge2->forward(torch::cat({h, ctx.c2}, 1))));
  h = up4->forward(h);
  check_context(h, ctx.c1, "C1");
  return unet_full->forward(merge1->forward(torch::cat({h, ctx.c1}, 1)));
}

PFrameCodecImpl::PFrameCodecImpl(const ArchTable& arch) {
  encoder = register_module("encoder", Encoder(arch));
  decoder = register_module("decoder", Synthesis(arch));
}

Latent pframe_encode(PFrameCodec& codec, const Frame& x, const ContextSet& ctx) {
  return Latent{codec->encoder->forward(x.pixels.unsqueeze(0), ctx), LatentKind::kFrame};
}

FeatureMap pframe_decode(PFrameCodec& codec, const Latent& latent, const ContextSet& ctx) {
  return FeatureMap{codec->decoder->forward(latent.values, ctx), 1};
}

FeatureMap proj_p(Synthesis& proj, const Latent& latent, const ContextSet& ctx) {
  return FeatureMap{proj->forward(latent.values, ctx), 1};
}

}  // namespace jscc::pframe
