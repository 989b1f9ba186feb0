#include "jscc/motion_codec.hpp"

#include "jscc/error.hpp"

namespace jscc::motion {

namespace F = torch::nn::functional;
using nn::leaky;

FlowLevelImpl::FlowLevelImpl(int64_t hidden) {
  const int64_t widths[] = {8, hidden, hidden, hidden, hidden / 2, 2};
  for (int i = 0; i < 5; ++i) {
    convs.push_back(register_module("conv" + std::to_string(i),
                                    nn::ConvLayer(widths[i], widths[i + 1], i < 4 ? 5 : 3)));
  }
  convs.back()->zero_init();
}

torch::Tensor FlowLevelImpl::forward(const torch::Tensor& input) {
  auto h = input;
  for (std::size_t i = 0; i + 1 < convs.size(); ++i) h = leaky(convs[i]->forward(h));
  return convs.back()->forward(h);
}

FlowEstimatorImpl::FlowEstimatorImpl(const ArchTable& arch) {
  require(arch.flow_levels >= 1, ErrorKind::kInvalidArgument, "flow estimator needs a level");
  for (int64_t i = 0; i < arch.flow_levels; ++i) {
    levels.push_back(register_module("level" + std::to_string(i), FlowLevel(arch.flow_hidden)));
  }
}

torch::Tensor FlowEstimatorImpl::forward(const torch::Tensor& prev, const torch::Tensor& cur) {
  require(prev.sizes() == cur.sizes(), ErrorKind::kShapeMismatch,
          "estimate_motion: frames differ in shape");
  const auto n = static_cast<int64_t>(levels.size());
  const int64_t coarsest = int64_t{1} << (n - 1);
  require(prev.size(2) % coarsest == 0 && prev.size(3) % coarsest == 0,
          ErrorKind::kShapeMismatch, "estimate_motion: size not divisible by pyramid factor");

  torch::Tensor flow;
  for (int64_t l = 0; l < n; ++l) {
    const int64_t factor = int64_t{1} << (n - 1 - l);
    auto p = factor > 1 ? F::avg_pool2d(prev, F::AvgPool2dFuncOptions(factor)) : prev;
    auto c = factor > 1 ? F::avg_pool2d(cur, F::AvgPool2dFuncOptions(factor)) : cur;
    if (!flow.defined()) {
      flow = torch::zeros({p.size(0), 2, p.size(2), p.size(3)}, p.options());
    } else {
      flow = nn::resize_flow(flow, p.size(2), p.size(3));
    }
    auto warped = nn::warp(p, flow);
    flow = flow + levels[static_cast<std::size_t>(l)]->forward(torch::cat({c, warped, flow}, 1));
  }
  return flow;
}

MvEncoderImpl::MvEncoderImpl(const ArchTable& arch) {
  const auto [m1, m2, m3] = arch.mv_widths;
  down1 = register_module("down1", nn::ResBlockDown(2, m1));
  down2 = register_module("down2", nn::ResBlockDown(m1, m2));
  down3 = register_module("down3", nn::ResBlockDown(m2, m3));
  to_latent = register_module("to_latent", nn::ConvLayer(m3, arch.mv_latent_channels, 3, 2));
}

torch::Tensor MvEncoderImpl::forward(const torch::Tensor& flow) {
  require(flow.size(1) == 2 && flow.size(2) % 16 == 0 && flow.size(3) % 16 == 0,
          ErrorKind::kShapeMismatch, "MV encoder needs B×2×H×W with H, W divisible by 16");
  auto h = down3->forward(down2->forward(down1->forward(flow / kFlowScale)));
  return to_latent->forward(h);
}

MvDecoderImpl::MvDecoderImpl(const ArchTable& arch) {
  const auto [m1, m2, m3] = arch.mv_widths;
  from_latent = register_module("from_latent", nn::ConvLayer(arch.mv_latent_channels, m3, 3));
  up1 = register_module("up1", nn::ResBlockUp(m3, m3));
  up2 = register_module("up2", nn::ResBlockUp(m3, m2));
  up3 = register_module("up3", nn::ResBlockUp(m2, m1));
  up4 = register_module("up4", nn::ResBlockUp(m1, m1));
  to_flow = register_module("to_flow", nn::ConvLayer(m1, 2, 3));
}

torch::Tensor MvDecoderImpl::forward(const torch::Tensor& latent) {
  auto h = leaky(from_latent->forward(latent));
  h = up4->forward(up3->forward(up2->forward(up1->forward(h))));
  return to_flow->forward(leaky(h)) * kFlowScale;
}

MvCodecImpl::MvCodecImpl(const ArchTable& arch) {
  encoder = register_module("encoder", MvEncoder(arch));
  decoder = register_module("decoder", MvDecoder(arch));
}

MotionField estimate_motion(FlowEstimator& estimator, const Frame& prev, const Frame& cur) {
  return MotionField{estimator->forward(prev.pixels.unsqueeze(0), cur.pixels.unsqueeze(0))};
}

Latent mv_encode(MvCodec& codec, const MotionField& flow) {
  auto f = flow.flow.dim() == 3 ? flow.flow.unsqueeze(0) : flow.flow;
  return Latent{codec->encoder->forward(f), LatentKind::kMotion};
}

MotionField mv_decode(MvCodec& codec, const Latent& latent) {
  return MotionField{codec->decoder->forward(latent.values)};
}

torch::Tensor endpoint_error(const torch::Tensor& a, const torch::Tensor& b,
                             const torch::Tensor& region) {
  auto epe = (a - b).pow(2).sum(1, true).add(1e-12).sqrt();
  if (!region.defined()) return epe.mean();
  return (epe * region).sum() / region.sum().clamp_min(1.0);
}

}  // namespace jscc::motion
