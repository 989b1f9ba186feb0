#include "jscc/primitives.hpp"

#include <cmath>

#include "jscc/error.hpp"
#include "jscc/flops.hpp"

namespace jscc {

namespace {
thread_local MacScope* active_scope = nullptr;
}

MacScope::MacScope() : previous_(active_scope) { active_scope = this; }
MacScope::~MacScope() { active_scope = previous_; }

void MacScope::add(int64_t macs) {
  for (auto* s = active_scope; s != nullptr; s = s->previous_) s->macs_ += macs;
}

}  // namespace jscc

namespace jscc::nn {

namespace F = torch::nn::functional;

namespace {
constexpr double kPedestal = 1.0 / (1 << 18) / (1 << 18);  // 2^-36
}

torch::Tensor leaky(const torch::Tensor& x) {
  return F::leaky_relu(x, F::LeakyReLUFuncOptions().negative_slope(kLeakySlope));
}

torch::Tensor clamp_unit_ste(const torch::Tensor& x) {
  return x + (x.clamp(0.0, 1.0) - x).detach();
}

torch::Tensor warp(const torch::Tensor& feature, const torch::Tensor& flow) {
  require(feature.dim() == 4 && flow.dim() == 4 && flow.size(1) == 2, ErrorKind::kShapeMismatch,
          "warp expects B×C×H×W features and B×2×H×W flow");
  require(feature.size(0) == flow.size(0) && feature.size(2) == flow.size(2) &&
              feature.size(3) == flow.size(3),
          ErrorKind::kShapeMismatch, "warp: flow and feature sizes differ");
  const auto b = feature.size(0);
  const auto h = feature.size(2);
  const auto w = feature.size(3);
  auto opts = flow.options().requires_grad(false);
  auto xs = torch::arange(w, opts).view({1, 1, w}).expand({b, h, w});
  auto ys = torch::arange(h, opts).view({1, h, 1}).expand({b, h, w});
  auto gx = (xs + flow.select(1, 0)) * (2.0 / static_cast<double>(std::max<int64_t>(w - 1, 1))) - 1.0;
  auto gy = (ys + flow.select(1, 1)) * (2.0 / static_cast<double>(std::max<int64_t>(h - 1, 1))) - 1.0;
  auto grid = torch::stack({gx, gy}, 3);
  MacScope::add(4 * feature.numel());
  return F::grid_sample(feature, grid,
                        F::GridSampleFuncOptions()
                            .mode(torch::kBilinear)
                            .padding_mode(torch::kBorder)
                            .align_corners(true));
}

torch::Tensor resize_flow(const torch::Tensor& flow, int64_t height, int64_t width) {
  const auto h0 = flow.size(2);
  const auto w0 = flow.size(3);
  if (h0 == height && w0 == width) return flow;
  auto resized = F::interpolate(flow, F::InterpolateFuncOptions()
                                          .size(std::vector<int64_t>{height, width})
                                          .mode(torch::kBilinear)
                                          .align_corners(false));
  auto scale = torch::tensor({static_cast<float>(width) / static_cast<float>(w0),
                              static_cast<float>(height) / static_cast<float>(h0)},
                             flow.options().requires_grad(false))
                   .view({1, 2, 1, 1});
  return resized * scale;
}

torch::Tensor subpixel_upsample(const torch::Tensor& x, int64_t factor) {
  require(x.dim() == 4, ErrorKind::kShapeMismatch, "subpixel_upsample expects B×C×H×W");
  require(factor > 0 && x.size(1) % (factor * factor) == 0, ErrorKind::kInvalidArgument,
          "subpixel_upsample: channels " + std::to_string(x.size(1)) +
              " not divisible by factor^2");
  return F::pixel_shuffle(x, factor);
}

torch::Tensor space_to_depth(const torch::Tensor& x, int64_t factor) {
  require(x.dim() == 4 && x.size(2) % factor == 0 && x.size(3) % factor == 0,
          ErrorKind::kInvalidArgument, "space_to_depth: spatial size not divisible by factor");
  return F::pixel_unshuffle(x, factor);
}

ConvLayerImpl::ConvLayerImpl(int64_t in, int64_t out, int64_t kernel_, int64_t stride_,
                             int64_t groups_, bool with_bias)
    : in_channels(in), out_channels(out), kernel(kernel_), stride(stride_), groups(groups_) {
  require(in > 0 && out > 0 && kernel_ > 0, ErrorKind::kInvalidArgument,
          "conv: channels and kernel must be positive");
  require(stride_ == 1 || stride_ == 2, ErrorKind::kInvalidArgument, "conv: stride must be 1 or 2");
  require(in % groups_ == 0 && out % groups_ == 0, ErrorKind::kInvalidArgument,
          "conv: channels not divisible by groups");
  const auto fan_in = (in / groups_) * kernel_ * kernel_;
  const double bound = std::sqrt(3.0 / static_cast<double>(fan_in));
  weight = register_parameter(
      "weight", torch::empty({out, in / groups_, kernel_, kernel_}).uniform_(-bound, bound));
  if (with_bias) bias = register_parameter("bias", torch::zeros({out}));
}

torch::Tensor ConvLayerImpl::forward(const torch::Tensor& x) {
  auto y = F::conv2d(x, weight,
                     F::Conv2dFuncOptions()
                         .bias(bias.defined() ? bias : torch::Tensor())
                         .stride(stride)
                         .padding(kernel / 2)
                         .groups(groups));
  MacScope::add(y.size(0) * out_channels * (in_channels / groups) * kernel * kernel * y.size(2) *
                y.size(3));
  return y;
}

void ConvLayerImpl::zero_init() {
  torch::NoGradGuard guard;
  weight.zero_();
  if (bias.defined()) bias.zero_();
}

GdnImpl::GdnImpl(int64_t channels_, bool inverse_, double gamma_init)
    : channels(channels_), inverse(inverse_) {
  beta_param = register_parameter("beta", torch::sqrt(torch::ones({channels_}) + kPedestal));
  gamma_param = register_parameter(
      "gamma", torch::sqrt(gamma_init * torch::eye(channels_) + kPedestal));
}

torch::Tensor GdnImpl::beta() const {
  const double floor = std::sqrt(kGdnBetaMin + kPedestal);
  return beta_param.clamp_min(floor).pow(2) - kPedestal;
}

torch::Tensor GdnImpl::gamma() const {
  return gamma_param.clamp_min(std::sqrt(kPedestal)).pow(2) - kPedestal;
}

void GdnImpl::set_effective(const torch::Tensor& beta_value, const torch::Tensor& gamma_value) {
  torch::NoGradGuard guard;
  beta_param.copy_(torch::sqrt(beta_value.clamp_min(kGdnBetaMin) + kPedestal));
  gamma_param.copy_(torch::sqrt(gamma_value.clamp_min(0.0) + kPedestal));
}

torch::Tensor GdnImpl::forward(const torch::Tensor& x) {
  auto g = gamma().view({channels, channels, 1, 1});
  auto norm = F::conv2d(x.pow(2), g, F::Conv2dFuncOptions().bias(beta()));
  MacScope::add(x.size(0) * channels * channels * x.size(2) * x.size(3));
  return inverse ? x * torch::sqrt(norm) : x * torch::rsqrt(norm);
}

DepthConvImpl::DepthConvImpl(int64_t in, int64_t out, int64_t kernel, int64_t stride) {
  depthwise = register_module("depthwise", ConvLayer(in, in, kernel, stride, in));
  pointwise = register_module("pointwise", ConvLayer(in, out, 1));
}

torch::Tensor DepthConvImpl::forward(const torch::Tensor& x) {
  return pointwise->forward(depthwise->forward(x));
}

DepthConvBlockImpl::DepthConvBlockImpl(int64_t in, int64_t out) {
  body = register_module("body", DepthConv(in, out));
  if (in != out) skip = register_module("skip", ConvLayer(in, out, 1));
}

torch::Tensor DepthConvBlockImpl::forward(const torch::Tensor& x) {
  auto identity = skip ? skip->forward(x) : x;
  return identity + leaky(body->forward(x));
}

ResBlockImpl::ResBlockImpl(int64_t channels) {
  conv1 = register_module("conv1", ConvLayer(channels, channels, 3));
  conv2 = register_module("conv2", ConvLayer(channels, channels, 3));
  conv2->zero_init();
}

torch::Tensor ResBlockImpl::forward(const torch::Tensor& x) {
  return x + conv2->forward(leaky(conv1->forward(x)));
}

ResBlockDownImpl::ResBlockDownImpl(int64_t in, int64_t out) {
  conv1 = register_module("conv1", ConvLayer(in, out, 3, 2));
  conv2 = register_module("conv2", ConvLayer(out, out, 3));
  gdn = register_module("gdn", Gdn(out));
  skip = register_module("skip", ConvLayer(in, out, 1, 2));
}

torch::Tensor ResBlockDownImpl::forward(const torch::Tensor& x) {
  return skip->forward(x) + gdn->forward(conv2->forward(leaky(conv1->forward(x))));
}

SubpixelConvImpl::SubpixelConvImpl(int64_t in, int64_t out, int64_t kernel) {
  conv = register_module("conv", ConvLayer(in, out * 4, kernel));
}

torch::Tensor SubpixelConvImpl::forward(const torch::Tensor& x) {
  return subpixel_upsample(conv->forward(x), 2);
}

ResBlockUpImpl::ResBlockUpImpl(int64_t in, int64_t out) {
  up = register_module("up", SubpixelConv(in, out, 3));
  conv = register_module("conv", ConvLayer(out, out, 3));
  igdn = register_module("igdn", Gdn(out, true));
  skip = register_module("skip", SubpixelConv(in, out, 1));
}

torch::Tensor ResBlockUpImpl::forward(const torch::Tensor& x) {
  return skip->forward(x) + igdn->forward(conv->forward(leaky(up->forward(x))));
}

UNetImpl::UNetImpl(int64_t c) {
  enc0a = register_module("enc0a", ConvLayer(c, c, 3));
  enc0b = register_module("enc0b", ConvLayer(c, c, 3));
  enc1a = register_module("enc1a", ConvLayer(c, 2 * c, 3, 2));
  enc1b = register_module("enc1b", ConvLayer(2 * c, 2 * c, 3));
  enc2a = register_module("enc2a", ConvLayer(2 * c, 2 * c, 3, 2));
  enc2b = register_module("enc2b", ConvLayer(2 * c, 2 * c, 3));
  up2 = register_module("up2", SubpixelConv(2 * c, 2 * c, 1));
  dec1 = register_module("dec1", ConvLayer(4 * c, 2 * c, 3));
  up1 = register_module("up1", SubpixelConv(2 * c, c, 1));
  dec0a = register_module("dec0a", ConvLayer(2 * c, c, 3));
  dec0b = register_module("dec0b", ConvLayer(c, c, 3));
  dec0b->zero_init();
}

torch::Tensor UNetImpl::forward(const torch::Tensor& x) {
  require(x.size(2) % 4 == 0 && x.size(3) % 4 == 0, ErrorKind::kShapeMismatch,
          "U-Net input size must be divisible by 4");
  auto e0 = leaky(enc0b->forward(leaky(enc0a->forward(x))));
  auto e1 = leaky(enc1b->forward(leaky(enc1a->forward(e0))));
  auto e2 = leaky(enc2b->forward(leaky(enc2a->forward(e1))));
  auto d1 = leaky(dec1->forward(torch::cat({leaky(up2->forward(e2)), e1}, 1)));
  auto d0 = leaky(dec0a->forward(torch::cat({leaky(up1->forward(d1)), e0}, 1)));
  return x + dec0b->forward(d0);
}

namespace {

template <typename M>
torch::nn::AnyModule any(M module) {
  return torch::nn::AnyModule(std::move(module));
}

}  // namespace

torch::nn::AnyModule build_block(const BlockSpec& spec) {
  require(spec.channels_in > 0 && spec.channels_out > 0, ErrorKind::kInvalidArgument,
          "block channels must be positive");
  require(spec.stride == 1 || spec.stride == 2, ErrorKind::kInvalidArgument,
          "block stride must be 1 or 2");
  require(spec.kernel > 0 && spec.kernel % 2 == 1, ErrorKind::kInvalidArgument,
          "block kernel must be a positive odd number");
  const bool same_width = spec.channels_in == spec.channels_out;
  switch (spec.kind) {
    case BlockKind::kConv:
      return any(ConvLayer(spec.channels_in, spec.channels_out, spec.kernel, spec.stride));
    case BlockKind::kDepthConv:
      return any(DepthConv(spec.channels_in, spec.channels_out, spec.kernel, spec.stride));
    case BlockKind::kResBlock:
      require(same_width && spec.stride == 1, ErrorKind::kInvalidArgument,
              "resblock needs equal widths and stride 1");
      return any(ResBlock(spec.channels_in));
    case BlockKind::kGdn:
    case BlockKind::kIgdn:
      require(same_width && spec.stride == 1, ErrorKind::kInvalidArgument,
              "gdn needs equal widths and stride 1");
      return any(Gdn(spec.channels_in, spec.kind == BlockKind::kIgdn));
    case BlockKind::kSubpixelUp:
      require(spec.stride == 1, ErrorKind::kInvalidArgument, "subpixel_up takes stride 1");
      return any(SubpixelConv(spec.channels_in, spec.channels_out, spec.kernel));
    case BlockKind::kUNet:
      require(same_width && spec.stride == 1, ErrorKind::kInvalidArgument,
              "unet needs equal widths and stride 1");
      return any(UNet(spec.channels_in));
  }
  fail(ErrorKind::kInvalidArgument, "unknown block kind");
}

int64_t parameter_count(const torch::nn::Module& module) {
  int64_t n = 0;
  for (const auto& p : module.parameters()) n += p.numel();
  return n;
}

}  // namespace jscc::nn
