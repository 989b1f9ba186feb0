#pragma once

#include <torch/torch.h>

#include "jscc/architecture.hpp"
#include "jscc/primitives.hpp"
#include "jscc/types.hpp"

namespace jscc::context {

enum class AlignMode {
  kOffsetDiversity,  // G offset groups fused by learned weights
  kSingleReference,  // plain warp by the motion field (ablation hook)
};

/// Offsets and modulation weights predicted for one alignment.
struct OffsetGroups {
  torch::Tensor offsets;  // B×G×2×H×W flow residuals
  torch::Tensor weights;  // B×G×1×H×W in [0,1]
};

/// Cond: (feature, reference frame, motion) → (C¹, C², C³) at 1, 1/2, 1/4
/// resolution with widths C_f, 2C_f, 4C_f. One instance serves both sides.
class ContextGeneratorImpl : public torch::nn::Module {
 public:
  explicit ContextGeneratorImpl(const ArchTable& arch);

  ContextSet forward(const torch::Tensor& feature, const torch::Tensor& frame,
                     const torch::Tensor& flow);

  OffsetGroups predict_offsets(const torch::Tensor& warped_feature,
                               const torch::Tensor& warped_frame, const torch::Tensor& flow);

  /// C³ restrided to latent resolution for the entropy model's temporal prior.
  torch::Tensor temporal_prior(const ContextSet& ctx);

  AlignMode mode = AlignMode::kOffsetDiversity;
  bool force_zero_offsets = false;

  int64_t feature_channels, groups;
  nn::ConvLayer offset1{nullptr}, offset2{nullptr}, offset_out{nullptr};
  nn::ConvLayer fusion{nullptr};
  nn::ConvLayer extract1{nullptr}, extract2{nullptr}, extract3{nullptr};
  nn::ResBlock res1{nullptr}, res2{nullptr}, res3{nullptr};
  nn::ConvLayer prior1{nullptr}, prior2{nullptr};
};
TORCH_MODULE(ContextGenerator);

ContextSet generate_contexts(ContextGenerator& cond, const FeatureMap& feature,
                             const Frame& frame, const MotionField& flow);
FeatureMap temporal_prior_input(ContextGenerator& cond, const ContextSet& ctx);

}  // namespace jscc::context
