#pragma once

#include <string>

#include <torch/torch.h>

namespace jscc::nn {

inline constexpr double kLeakySlope = 0.01;
inline constexpr double kGdnBetaMin = 1e-6;

torch::Tensor leaky(const torch::Tensor& x);

/// Clamp to [0,1] in the forward pass with an identity gradient.
torch::Tensor clamp_unit_ste(const torch::Tensor& x);

/// Bilinear backward warp: out(p) = feature(p + flow(p)), border replication.
/// feature is B×C×H×W, flow is B×2×H×W with (dx, dy) in pixels.
torch::Tensor warp(const torch::Tensor& feature, const torch::Tensor& flow);

/// Bilinear resize of a flow field with its vectors scaled by the size ratio.
torch::Tensor resize_flow(const torch::Tensor& flow, int64_t height, int64_t width);

/// Pixel shuffle, B×(C·r²)×H×W → B×C×(rH)×(rW). Output element
/// (c, r·h + i, r·w + j) is input element (c·r² + i·r + j, h, w).
torch::Tensor subpixel_upsample(const torch::Tensor& x, int64_t factor = 2);
torch::Tensor space_to_depth(const torch::Tensor& x, int64_t factor = 2);

/// Plain 2-D convolution with "same" padding, optional groups, MAC reporting.
class ConvLayerImpl : public torch::nn::Module {
 public:
  ConvLayerImpl(int64_t in, int64_t out, int64_t kernel, int64_t stride = 1, int64_t groups = 1,
                bool bias = true);
  torch::Tensor forward(const torch::Tensor& x);

  void zero_init();

  torch::Tensor weight;
  torch::Tensor bias;
  int64_t in_channels, out_channels, kernel, stride, groups;
};
TORCH_MODULE(ConvLayer);

/// Generalized divisive normalization; multiplies instead of divides when
/// `inverse` is set. β and γ are stored as offset square roots so that
/// β ≥ β_min and γ ≥ 0 hold for any parameter value.
class GdnImpl : public torch::nn::Module {
 public:
  GdnImpl(int64_t channels, bool inverse = false, double gamma_init = 0.1);
  torch::Tensor forward(const torch::Tensor& x);

  torch::Tensor beta() const;
  torch::Tensor gamma() const;
  /// Sets the effective β (C) and γ (C×C).
  void set_effective(const torch::Tensor& beta, const torch::Tensor& gamma);

  torch::Tensor beta_param;
  torch::Tensor gamma_param;
  int64_t channels;
  bool inverse;
};
TORCH_MODULE(Gdn);

/// Per-channel spatial convolution followed by a 1×1 pointwise convolution.
class DepthConvImpl : public torch::nn::Module {
 public:
  DepthConvImpl(int64_t in, int64_t out, int64_t kernel = 3, int64_t stride = 1);
  torch::Tensor forward(const torch::Tensor& x);

  ConvLayer depthwise{nullptr};
  ConvLayer pointwise{nullptr};
};
TORCH_MODULE(DepthConv);

/// DepthConv with leaky activation and a (projected) skip connection.
class DepthConvBlockImpl : public torch::nn::Module {
 public:
  DepthConvBlockImpl(int64_t in, int64_t out);
  torch::Tensor forward(const torch::Tensor& x);

  DepthConv body{nullptr};
  ConvLayer skip{nullptr};
};
TORCH_MODULE(DepthConvBlock);

/// conv → leaky → conv + x, last conv zero-initialised (identity at init).
class ResBlockImpl : public torch::nn::Module {
 public:
  explicit ResBlockImpl(int64_t channels);
  torch::Tensor forward(const torch::Tensor& x);

  ConvLayer conv1{nullptr}, conv2{nullptr};
};
TORCH_MODULE(ResBlock);

/// Stride-2 residual block: conv s2 → leaky → conv → GDN, skip is a 1×1 s2 conv.
class ResBlockDownImpl : public torch::nn::Module {
 public:
  ResBlockDownImpl(int64_t in, int64_t out);
  torch::Tensor forward(const torch::Tensor& x);

  ConvLayer conv1{nullptr}, conv2{nullptr}, skip{nullptr};
  Gdn gdn{nullptr};
};
TORCH_MODULE(ResBlockDown);

/// conv followed by pixel shuffle (×2).
class SubpixelConvImpl : public torch::nn::Module {
 public:
  SubpixelConvImpl(int64_t in, int64_t out, int64_t kernel = 3);
  torch::Tensor forward(const torch::Tensor& x);

  ConvLayer conv{nullptr};
};
TORCH_MODULE(SubpixelConv);

/// Upsampling residual block: subpixel conv → leaky → conv → IGDN, skip is a
/// subpixel 1×1 conv.
class ResBlockUpImpl : public torch::nn::Module {
 public:
  ResBlockUpImpl(int64_t in, int64_t out);
  torch::Tensor forward(const torch::Tensor& x);

  SubpixelConv up{nullptr}, skip{nullptr};
  ConvLayer conv{nullptr};
  Gdn igdn{nullptr};
};
TORCH_MODULE(ResBlockUp);

/// Two-level U-Net with skip concatenation, widths (C, 2C), residual output.
/// Input spatial sizes must be divisible by 4.
class UNetImpl : public torch::nn::Module {
 public:
  explicit UNetImpl(int64_t channels);
  torch::Tensor forward(const torch::Tensor& x);

  ConvLayer enc0a{nullptr}, enc0b{nullptr};
  ConvLayer enc1a{nullptr}, enc1b{nullptr};
  ConvLayer enc2a{nullptr}, enc2b{nullptr};
  SubpixelConv up2{nullptr}, up1{nullptr};
  ConvLayer dec1{nullptr}, dec0a{nullptr}, dec0b{nullptr};
};
TORCH_MODULE(UNet);

enum class BlockKind { kConv, kDepthConv, kResBlock, kGdn, kIgdn, kSubpixelUp, kUNet };

struct BlockSpec {
  BlockKind kind = BlockKind::kConv;
  int64_t channels_in = 0;
  int64_t channels_out = 0;
  int64_t stride = 1;
  int64_t kernel = 3;
};

/// Builds one block from its description. Kinds that cannot change width
/// (resblock, gdn, igdn, unet) require channels_in == channels_out.
torch::nn::AnyModule build_block(const BlockSpec& spec);

int64_t parameter_count(const torch::nn::Module& module);

}  // namespace jscc::nn
