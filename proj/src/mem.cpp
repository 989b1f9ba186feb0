#include "jscc/mem.hpp"

#include <ATen/CPUGeneratorImpl.h>

#include <cmath>
#include <numbers>

#include "jscc/channel.hpp"
#include "jscc/error.hpp"
#include "jscc/flops.hpp"

namespace jscc::mem {

namespace F = torch::nn::functional;
using nn::leaky;

int64_t Mask::popcount() const {
  int64_t n = 0;
  for (auto b : bits) n += b != 0;
  return n;
}

std::vector<int64_t> Mask::kept_indices() const {
  std::vector<int64_t> idx;
  for (std::size_t i = 0; i < bits.size(); ++i) {
    if (bits[i] != 0) idx.push_back(static_cast<int64_t>(i));
  }
  return idx;
}

Mask Mask::all(std::size_t channels, bool keep, uint32_t frame_index) {
  return Mask{std::vector<uint8_t>(channels, keep ? 1 : 0), frame_index};
}

Mask Mask::first_n(std::size_t channels, std::size_t n, uint32_t frame_index) {
  Mask m = all(channels, false, frame_index);
  for (std::size_t i = 0; i < std::min(n, channels); ++i) m.bits[i] = 1;
  return m;
}

MaskedConvImpl::MaskedConvImpl(int64_t in, int64_t out, int64_t kernel) {
  conv = register_module("conv", nn::ConvLayer(in, out, kernel));
  auto m = torch::zeros({1, 1, kernel, kernel});
  const auto center = kernel / 2;
  m.slice(2, 0, center).fill_(1.0);
  m[0][0][center].slice(0, 0, center).fill_(1.0);
  mask = register_buffer("mask", m);
}

torch::Tensor MaskedConvImpl::forward(const torch::Tensor& x) {
  auto y = F::conv2d(x, conv->weight * mask,
                     F::Conv2dFuncOptions().bias(conv->bias).padding(conv->kernel / 2));
  MacScope::add(y.size(0) * conv->out_channels * conv->in_channels * conv->kernel * conv->kernel *
                y.size(2) * y.size(3));
  return y;
}

EntropyModelImpl::EntropyModelImpl(int64_t c, const ArchTable& arch, bool temporal)
    : latent_channels(c), with_temporal(temporal) {
  const auto e = arch.entropy_width;
  hyper_enc1 = register_module("hyper_enc1", nn::ConvLayer(c, e, 3));
  hyper_enc2 = register_module("hyper_enc2", nn::ConvLayer(e, e, 3, 2));
  hyper_enc3 = register_module("hyper_enc3", nn::ConvLayer(e, arch.hyper_channels, 3, 2));
  hyper_dec1 = register_module("hyper_dec1", nn::SubpixelConv(arch.hyper_channels, e, 3));
  hyper_dec2 = register_module("hyper_dec2", nn::SubpixelConv(e, e, 3));
  hyper_dec3 = register_module("hyper_dec3", nn::ConvLayer(e, e, 3));
  context = register_module("context", MaskedConv(c, e, 5));
  int64_t fused_in = 2 * e;
  if (with_temporal) {
    temporal_in = register_module("temporal_in", nn::ConvLayer(arch.temporal_prior_channels, e, 1));
    fused_in += e;
  }
  fuse1 = register_module("fuse1", nn::ConvLayer(fused_in, 2 * e, 1));
  fuse2 = register_module("fuse2", nn::ConvLayer(2 * e, 2 * e, 1));
  fuse_out = register_module("fuse_out", nn::ConvLayer(2 * e, 2 * c, 1));
  fuse_out->zero_init();
}

torch::Tensor EntropyModelImpl::hyper_features(const torch::Tensor& y) {
  require(y.size(2) % 4 == 0 && y.size(3) % 4 == 0, ErrorKind::kShapeMismatch,
          "entropy model: latent grid must be divisible by 4");
  auto z = hyper_enc3->forward(leaky(hyper_enc2->forward(leaky(hyper_enc1->forward(y)))));
  return hyper_dec3->forward(leaky(hyper_dec2->forward(leaky(hyper_dec1->forward(z)))));
}

torch::Tensor EntropyModelImpl::context_features(const torch::Tensor& y) {
  return context->forward(y);
}

EntropyParams EntropyModelImpl::fuse(const torch::Tensor& hyper, const torch::Tensor& ctx,
                                     const torch::Tensor& temporal) {
  std::vector<torch::Tensor> parts{hyper, ctx};
  if (with_temporal) {
    auto t = temporal.defined()
                 ? temporal
                 : torch::zeros({hyper.size(0), temporal_in->in_channels, hyper.size(2),
                                 hyper.size(3)},
                                hyper.options());
    parts.push_back(temporal_in->forward(t));
  }
  auto h = leaky(fuse2->forward(leaky(fuse1->forward(torch::cat(parts, 1)))));
  auto out = fuse_out->forward(h);
  auto mu = out.slice(1, 0, latent_channels);
  auto log_var = out.slice(1, latent_channels, 2 * latent_channels).clamp(-30.0, 30.0);
  return EntropyParams{mu, torch::exp(log_var) + kSigma2Floor};
}

EntropyParams EntropyModelImpl::forward(const torch::Tensor& y, const torch::Tensor& temporal,
                                        EstimationMode mode) {
  require(y.size(1) == latent_channels, ErrorKind::kShapeMismatch,
          "entropy model: latent width mismatch");
  require(with_temporal || !temporal.defined(), ErrorKind::kInvalidArgument,
          "entropy model without temporal branch received a temporal prior");
  auto ctx = mode == EstimationMode::kAutoregressive ? context_features(y)
                                                      : context_features(torch::zeros_like(y));
  return fuse(hyper_features(y), ctx, temporal);
}

PolicyNetImpl::PolicyNetImpl(int64_t c, int64_t hidden) {
  fc1 = register_module("fc1", torch::nn::Linear(6, hidden));
  fc2 = register_module("fc2", torch::nn::Linear(hidden, hidden));
  fc3 = register_module("fc3", torch::nn::Linear(hidden, 2));
  torch::NoGradGuard guard;
  fc3->weight.zero_();
  fc3->bias.zero_();
  // Start out keeping every channel with probability ~0.88.
  channel_bias = register_parameter("channel_bias",
                                    torch::tensor({2.0f, 0.0f}).repeat({c, 1}).contiguous());
}

torch::Tensor PolicyNetImpl::forward(const torch::Tensor& summary) {
  auto features = torch::stack({summary.select(2, 0), torch::log(summary.select(2, 1)),
                                summary.select(2, 2)},
                               2);
  auto global = features.mean(1, true).expand_as(features);
  auto h = leaky(fc2->forward(leaky(fc1->forward(torch::cat({features, global}, 2)))));
  return fc3->forward(h) + channel_bias;
}

SymbolStackImpl::SymbolStackImpl(int64_t c, bool inverse) {
  in = register_module("in", nn::ConvLayer(c, c, 1));
  gdn = register_module("gdn", nn::Gdn(c, inverse));
  out = register_module("out", nn::ConvLayer(c, c, 1));
}

torch::Tensor SymbolStackImpl::forward(const torch::Tensor& x) {
  return out->forward(gdn->forward(in->forward(x)));
}

MemImpl::MemImpl(int64_t c, const ArchTable& arch, bool with_temporal) : latent_channels(c) {
  entropy = register_module("entropy", EntropyModel(c, arch, with_temporal));
  policy = register_module("policy", PolicyNet(c, arch.policy_hidden));
  encoder_stack = register_module("encoder_stack", SymbolStack(c, false));
  decoder_stack = register_module("decoder_stack", SymbolStack(c, true));
}

EntropyParams estimate_entropy_params(Mem& mem, const Latent& y,
                                      const std::optional<FeatureMap>& temporal,
                                      EstimationMode mode) {
  return mem->entropy->forward(y.values, temporal ? temporal->values : torch::Tensor(), mode);
}

torch::Tensor gaussian_nll(const torch::Tensor& y, const EntropyParams& p) {
  const double log_2pi = std::log(2.0 * std::numbers::pi);
  return (0.5 * (log_2pi + torch::log(p.sigma2)) + (y - p.mu).pow(2) / (2.0 * p.sigma2)).mean();
}

torch::Tensor channel_entropy_summary(const EntropyParams& p) {
  const double log_2pie = std::log(2.0 * std::numbers::pi * std::numbers::e);
  auto entropy = 0.5 * (log_2pie + torch::log(p.sigma2));
  return torch::stack({p.mu.mean({2, 3}), p.sigma2.mean({2, 3}), entropy.mean({2, 3})}, 2);
}

namespace {

/// One-hot forward, identity backward.
struct HardStraightThrough : public torch::autograd::Function<HardStraightThrough> {
  static torch::Tensor forward(torch::autograd::AutogradContext*, const torch::Tensor& soft) {
    return F::one_hot(soft.argmax(-1), soft.size(-1)).to(soft.scalar_type());
  }
  static torch::autograd::variable_list backward(torch::autograd::AutogradContext*,
                                                 torch::autograd::variable_list grads) {
    return {grads[0]};
  }
};

std::vector<Mask> masks_from(const torch::Tensor& keep, uint32_t frame_index) {
  auto k = keep.detach().to(torch::kCPU).contiguous();
  std::vector<Mask> masks;
  const auto b = k.size(0);
  const auto c = k.size(1);
  const auto* data = k.data_ptr<float>();
  for (int64_t i = 0; i < b; ++i) {
    Mask m{std::vector<uint8_t>(static_cast<std::size_t>(c)), frame_index};
    for (int64_t j = 0; j < c; ++j) m.bits[static_cast<std::size_t>(j)] = data[i * c + j] > 0.5f;
    masks.push_back(std::move(m));
  }
  return masks;
}

}  // namespace

torch::Tensor gumbel_keep(const torch::Tensor& logits, double tau, PolicyMode mode,
                          uint64_t seed) {
  require(tau > 0.0, ErrorKind::kInvalidArgument, "Gumbel temperature must be positive");
  if (mode == PolicyMode::kEval) {
    return F::one_hot(logits.detach().argmax(-1), 2).to(logits.scalar_type()).select(-1, 0);
  }
  auto gen = at::make_generator<at::CPUGeneratorImpl>(seed);
  auto u = torch::rand(logits.sizes(), gen, logits.options().requires_grad(false))
               .clamp(1e-10, 1.0 - 1e-10);
  auto gumbel = -torch::log(-torch::log(u));
  auto soft = torch::softmax((logits + gumbel) / tau, -1);
  return HardStraightThrough::apply(soft).select(-1, 0);
}

PolicyDecision policy_mask(Mem& mem, const torch::Tensor& summary, double tau, PolicyMode mode,
                           uint64_t seed, uint32_t frame_index) {
  PolicyDecision d;
  d.logits = mem->policy->forward(summary);
  d.keep = gumbel_keep(d.logits, tau, mode, seed);
  d.keep_prob = torch::softmax(d.logits, -1).select(-1, 0);
  d.masks = masks_from(d.keep, frame_index);
  return d;
}

PolicyDecision forced_decision(const std::vector<Mask>& masks) {
  require(!masks.empty(), ErrorKind::kInvalidArgument, "forced decision needs masks");
  const auto c = static_cast<int64_t>(masks.front().channels());
  auto keep = torch::zeros({static_cast<int64_t>(masks.size()), c});
  for (std::size_t i = 0; i < masks.size(); ++i) {
    require(static_cast<int64_t>(masks[i].channels()) == c, ErrorKind::kShapeMismatch,
            "forced masks differ in width");
    for (int64_t j = 0; j < c; ++j) {
      keep[static_cast<int64_t>(i)][j] = static_cast<float>(masks[i].bits[static_cast<std::size_t>(j)]);
    }
  }
  return PolicyDecision{masks, keep, keep.clone(), torch::Tensor()};
}

namespace {

torch::Tensor index_tensor(const Mask& m) {
  auto idx = m.kept_indices();
  return torch::tensor(idx, torch::kInt64);
}

}  // namespace

std::vector<TransmitPayload> pack_symbols(const torch::Tensor& ytilde,
                                          const PolicyDecision& decision, double power,
                                          bool keep_gradient_companions) {
  const auto b = ytilde.size(0);
  const auto c = ytilde.size(1);
  require(static_cast<int64_t>(decision.masks.size()) == b && decision.keep.size(1) == c,
          ErrorKind::kShapeMismatch, "mask does not match the latent");
  std::vector<TransmitPayload> out;
  out.reserve(static_cast<std::size_t>(b));
  for (int64_t i = 0; i < b; ++i) {
    const auto& mask = decision.masks[static_cast<std::size_t>(i)];
    TransmitPayload p;
    p.mask = mask;
    p.height = ytilde.size(2);
    p.width = ytilde.size(3);
    auto masked = ytilde[i] * decision.keep[i].view({c, 1, 1});
    torch::Tensor gain;
    if (mask.popcount() == 0) {
      p.symbols = torch::zeros({0}, ytilde.options());
      gain = torch::ones({}, ytilde.options());
    } else {
      auto compact = masked.index_select(0, index_tensor(mask)).reshape({-1});
      gain = channel::power_gain(compact, power);
      p.symbols = compact * gain;
    }
    if (keep_gradient_companions) {
      p.keep_st = decision.keep[i];
      p.scaled_dense = ytilde[i] * gain;
    }
    out.push_back(std::move(p));
  }
  return out;
}

std::vector<TransmitPayload> mem_encode(Mem& mem, const Latent& y, const PolicyDecision& decision,
                                        double power, bool keep_gradient_companions) {
  require(y.channels() == mem->latent_channels, ErrorKind::kShapeMismatch,
          "mem_encode: latent width mismatch");
  return pack_symbols(mem->encoder_stack->forward(y.values), decision, power,
                      keep_gradient_companions);
}

torch::Tensor unpack_symbols(const std::vector<TransmitPayload>& received, int64_t channels) {
  require(!received.empty(), ErrorKind::kInvalidArgument, "no payloads to decode");
  std::vector<torch::Tensor> dense;
  for (const auto& p : received) {
    require(static_cast<int64_t>(p.mask.channels()) == channels, ErrorKind::kShapeMismatch,
            "mask width " + std::to_string(p.mask.channels()) + " does not match expected " +
                std::to_string(channels));
    const auto pop = p.mask.popcount();
    require(p.symbols.numel() == pop * p.height * p.width, ErrorKind::kShapeMismatch,
            "payload length " + std::to_string(p.symbols.numel()) +
                " inconsistent with mask popcount " + std::to_string(pop));
    auto d = torch::zeros({channels, p.height, p.width}, p.symbols.options().requires_grad(false));
    if (pop > 0) d = d.index_copy(0, index_tensor(p.mask), p.symbols.view({pop, p.height, p.width}));
    if (p.keep_st.defined() && p.scaled_dense.defined() && p.keep_st.requires_grad()) {
      auto dropped = torch::ones({channels});
      for (auto i : p.mask.kept_indices()) dropped[i] = 0.0f;
      auto zero_valued = (p.keep_st - p.keep_st.detach()) * dropped;
      d = d + p.scaled_dense * zero_valued.view({channels, 1, 1});
    }
    dense.push_back(d);
  }
  return torch::stack(dense);
}

Latent mem_decode(Mem& mem, const std::vector<TransmitPayload>& received, int64_t expected_channels,
                  LatentKind kind) {
  require(expected_channels == mem->latent_channels, ErrorKind::kShapeMismatch,
          "mem_decode: expected width differs from the module");
  return Latent{mem->decoder_stack->forward(unpack_symbols(received, expected_channels)), kind};
}

std::size_t serialized_mask_size(std::size_t channels) { return 8 + (channels + 7) / 8; }

std::vector<uint8_t> serialize_mask(const Mask& mask) {
  const auto c = mask.channels();
  require(c <= 65535, ErrorKind::kInvalidArgument, "mask wider than 65535 channels");
  std::vector<uint8_t> out(serialized_mask_size(c), 0);
  out[0] = 0x4A;
  out[1] = 0x4D;
  for (int i = 0; i < 4; ++i) out[2 + i] = static_cast<uint8_t>(mask.frame_index >> (8 * i));
  out[6] = static_cast<uint8_t>(c & 0xFF);
  out[7] = static_cast<uint8_t>(c >> 8);
  for (std::size_t i = 0; i < c; ++i) {
    if (mask.bits[i] != 0) out[8 + i / 8] |= static_cast<uint8_t>(1u << (i % 8));
  }
  return out;
}

Mask deserialize_mask(const std::vector<uint8_t>& bytes) {
  require(bytes.size() >= 8, ErrorKind::kFormat, "mask record truncated: header needs 8 bytes");
  require(bytes[0] == 0x4A && bytes[1] == 0x4D, ErrorKind::kFormat, "mask record: bad magic");
  Mask m;
  for (int i = 0; i < 4; ++i) m.frame_index |= static_cast<uint32_t>(bytes[2 + i]) << (8 * i);
  const std::size_t c = bytes[6] | (static_cast<std::size_t>(bytes[7]) << 8);
  require(bytes.size() == serialized_mask_size(c), ErrorKind::kFormat,
          "mask record: expected " + std::to_string(serialized_mask_size(c)) + " bytes for C=" +
              std::to_string(c) + ", got " + std::to_string(bytes.size()));
  m.bits.resize(c);
  for (std::size_t i = 0; i < c; ++i) m.bits[i] = (bytes[8 + i / 8] >> (i % 8)) & 1u;
  if (c % 8 != 0) {
    require((bytes.back() >> (c % 8)) == 0, ErrorKind::kFormat, "mask record: nonzero padding");
  }
  return m;
}

void tie_inverse_stacks(Mem& mem) {
  torch::NoGradGuard guard;
  auto& enc = mem->encoder_stack;
  auto& dec = mem->decoder_stack;
  const auto c = mem->latent_channels;
  auto identity_gdn = [c](nn::Gdn& g) {
    g->set_effective(torch::ones({c}), torch::zeros({c, c}));
  };
  identity_gdn(enc->gdn);
  identity_gdn(dec->gdn);
  auto invert = [c](nn::ConvLayer& forward_layer, nn::ConvLayer& inverse_layer) {
    auto w = forward_layer->weight.view({c, c}).to(torch::kFloat64);
    auto w_inv = torch::linalg_inv(w);
    auto b = forward_layer->bias.to(torch::kFloat64);
    inverse_layer->weight.copy_(w_inv.view({c, c, 1, 1}).to(torch::kFloat32));
    inverse_layer->bias.copy_((-w_inv.matmul(b)).to(torch::kFloat32));
  };
  invert(enc->out, dec->in);
  invert(enc->in, dec->out);
}

}  // namespace jscc::mem
