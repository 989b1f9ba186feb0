#include "jscc/context_gen.hpp"

#include "jscc/error.hpp"

namespace jscc::context {

using nn::leaky;

ContextGeneratorImpl::ContextGeneratorImpl(const ArchTable& arch)
    : feature_channels(arch.feature_channels), groups(arch.offset_groups) {
  const auto c = arch.feature_channels;
  const auto hidden = arch.offset_hidden;
  offset1 = register_module("offset1", nn::ConvLayer(c + 3 + 2, hidden, 3));
  offset2 = register_module("offset2", nn::ConvLayer(hidden, hidden, 3));
  offset_out = register_module("offset_out", nn::ConvLayer(hidden, groups * 3, 3));
  offset_out->zero_init();
  fusion = register_module("fusion", nn::ConvLayer(c, c, 1));
  extract1 = register_module("extract1", nn::ConvLayer(c + 3, c, 3));
  extract2 = register_module("extract2", nn::ConvLayer(c, 2 * c, 3, 2));
  extract3 = register_module("extract3", nn::ConvLayer(2 * c, 4 * c, 3, 2));
  res1 = register_module("res1", nn::ResBlock(c));
  res2 = register_module("res2", nn::ResBlock(2 * c));
  res3 = register_module("res3", nn::ResBlock(4 * c));
  prior1 = register_module("prior1", nn::ConvLayer(4 * c, arch.temporal_prior_channels, 3, 2));
  prior2 = register_module("prior2", nn::ConvLayer(arch.temporal_prior_channels,
                                                   arch.temporal_prior_channels, 3, 2));
  prior2->zero_init();
}

OffsetGroups ContextGeneratorImpl::predict_offsets(const torch::Tensor& warped_feature,
                                                   const torch::Tensor& warped_frame,
                                                   const torch::Tensor& flow) {
  auto h = leaky(offset1->forward(torch::cat({warped_feature, warped_frame, flow}, 1)));
  auto out = offset_out->forward(leaky(offset2->forward(h)));
  const auto b = out.size(0);
  out = out.view({b, groups, 3, out.size(2), out.size(3)});
  return OffsetGroups{out.slice(2, 0, 2), torch::sigmoid(out.slice(2, 2, 3))};
}

ContextSet ContextGeneratorImpl::forward(const torch::Tensor& feature, const torch::Tensor& frame,
                                         const torch::Tensor& flow) {
  require(feature.dim() == 4 && feature.size(1) == feature_channels, ErrorKind::kShapeMismatch,
          "generate_contexts: feature width mismatch");
  require(frame.size(2) == feature.size(2) && frame.size(3) == feature.size(3) &&
              flow.size(2) == feature.size(2) && flow.size(3) == feature.size(3),
          ErrorKind::kShapeMismatch, "generate_contexts: feature, frame and flow sizes differ");

  auto warped_feature = nn::warp(feature, flow);
  auto warped_frame = nn::warp(frame, flow);

  torch::Tensor aligned;
  if (mode == AlignMode::kSingleReference) {
    aligned = warped_feature;
  } else {
    auto og = predict_offsets(warped_feature, warped_frame, flow);
    for (int64_t g = 0; g < groups; ++g) {
      auto offset = og.offsets.select(1, g);
      if (force_zero_offsets) offset = torch::zeros_like(offset);
      auto term = nn::warp(feature, flow + offset) * og.weights.select(1, g);
      aligned = aligned.defined() ? aligned + term : term;
    }
  }
  aligned = fusion->forward(aligned);

  ContextSet ctx;
  ctx.c1 = res1->forward(leaky(extract1->forward(torch::cat({aligned, warped_frame}, 1))));
  ctx.c2 = res2->forward(leaky(extract2->forward(ctx.c1)));
  ctx.c3 = res3->forward(leaky(extract3->forward(ctx.c2)));
  return ctx;
}

torch::Tensor ContextGeneratorImpl::temporal_prior(const ContextSet& ctx) {
  return prior2->forward(leaky(prior1->forward(ctx.c3)));
}

ContextSet generate_contexts(ContextGenerator& cond, const FeatureMap& feature,
                             const Frame& frame, const MotionField& flow) {
  require(feature.scale == 1, ErrorKind::kShapeMismatch, "contexts need a scale-1 feature");
  auto f = flow.flow.dim() == 3 ? flow.flow.unsqueeze(0) : flow.flow;
  return cond->forward(feature.values, frame.pixels.unsqueeze(0), f);
}

FeatureMap temporal_prior_input(ContextGenerator& cond, const ContextSet& ctx) {
  return FeatureMap{cond->temporal_prior(ctx), 16};
}

}  // namespace jscc::context
