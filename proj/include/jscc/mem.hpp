#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include <torch/torch.h>

#include "jscc/architecture.hpp"
#include "jscc/primitives.hpp"
#include "jscc/types.hpp"

namespace jscc::mem {

inline constexpr double kSigma2Floor = 1e-6;

struct EntropyParams {
  torch::Tensor mu;      // same shape as the latent
  torch::Tensor sigma2;  // strictly positive
};

/// Per-channel keep/drop bits for one frame.
struct Mask {
  std::vector<uint8_t> bits;  // one entry per channel, 0 or 1
  uint32_t frame_index = 0;

  std::size_t channels() const { return bits.size(); }
  int64_t popcount() const;
  std::vector<int64_t> kept_indices() const;

  static Mask all(std::size_t channels, bool keep, uint32_t frame_index = 0);
  static Mask first_n(std::size_t channels, std::size_t n, uint32_t frame_index = 0);

  bool operator==(const Mask&) const = default;
};

/// Policy output for a batch. `keep` is exactly {0,1} in the forward pass
/// and carries straight-through gradients in train mode; `keep_prob` is the
/// soft keep probability used by the training-time rate term.
struct PolicyDecision {
  std::vector<Mask> masks;  // one per batch element
  torch::Tensor keep;       // B×C
  torch::Tensor keep_prob;  // B×C
  torch::Tensor logits;     // B×C×2 (keep, drop); undefined for forced masks
};

/// Symbols of one frame after MEM_e, retained channels only, ascending
/// channel index, row-major spatial order within a channel.
struct TransmitPayload {
  torch::Tensor symbols;  // 1-D
  Mask mask;
  int64_t height = 0;  // latent grid
  int64_t width = 0;
  // Gradient-only companions so that dropped channels still receive a
  // straight-through signal. Both undefined outside training.
  torch::Tensor keep_st;
  torch::Tensor scaled_dense;  // C×h×w, ỹ times the power-normalization gain
};

enum class EstimationMode { kParallel, kAutoregressive };
enum class PolicyMode { kTrain, kEval };

/// 5×5 convolution that only sees raster-order predecessors of each position.
class MaskedConvImpl : public torch::nn::Module {
 public:
  MaskedConvImpl(int64_t in, int64_t out, int64_t kernel = 5);
  torch::Tensor forward(const torch::Tensor& x);

  nn::ConvLayer conv{nullptr};
  torch::Tensor mask;
};
TORCH_MODULE(MaskedConv);

/// Fuses hyper, autoregressive and (for P-frames) temporal priors into
/// per-element Gaussian parameters. Runs at the encoder only.
class EntropyModelImpl : public torch::nn::Module {
 public:
  EntropyModelImpl(int64_t latent_channels, const ArchTable& arch, bool with_temporal);

  EntropyParams forward(const torch::Tensor& y, const torch::Tensor& temporal,
                        EstimationMode mode);

  torch::Tensor hyper_features(const torch::Tensor& y);
  torch::Tensor context_features(const torch::Tensor& y);
  EntropyParams fuse(const torch::Tensor& hyper, const torch::Tensor& context,
                     const torch::Tensor& temporal);

  int64_t latent_channels;
  bool with_temporal;
  nn::ConvLayer hyper_enc1{nullptr}, hyper_enc2{nullptr}, hyper_enc3{nullptr};
  nn::SubpixelConv hyper_dec1{nullptr}, hyper_dec2{nullptr};
  nn::ConvLayer hyper_dec3{nullptr};
  MaskedConv context{nullptr};
  nn::ConvLayer temporal_in{nullptr};
  nn::ConvLayer fuse1{nullptr}, fuse2{nullptr}, fuse_out{nullptr};
};
TORCH_MODULE(EntropyModel);

/// Shared per-channel network over entropy statistics producing
/// (keep, drop) logits; channels interact through the batch-global summary.
class PolicyNetImpl : public torch::nn::Module {
 public:
  PolicyNetImpl(int64_t latent_channels, int64_t hidden);
  /// summary: B×C×3 → logits B×C×2.
  torch::Tensor forward(const torch::Tensor& summary);

  torch::nn::Linear fc1{nullptr}, fc2{nullptr}, fc3{nullptr};
  torch::Tensor channel_bias;  // C×2
};
TORCH_MODULE(PolicyNet);

/// Convolutional stack producing ỹ at the encoder (GDN) or ŷ at the decoder
/// (IGDN). 1×1 convolutions keep the stack invertible.
class SymbolStackImpl : public torch::nn::Module {
 public:
  SymbolStackImpl(int64_t channels, bool inverse);
  torch::Tensor forward(const torch::Tensor& x);

  nn::ConvLayer in{nullptr}, out{nullptr};
  nn::Gdn gdn{nullptr};
};
TORCH_MODULE(SymbolStack);

/// One MEM_e/MEM_d instance (checkpoint entries mem.iframe, mem.pframe, mem.mv).
class MemImpl : public torch::nn::Module {
 public:
  MemImpl(int64_t latent_channels, const ArchTable& arch, bool with_temporal);

  int64_t latent_channels;
  EntropyModel entropy{nullptr};
  PolicyNet policy{nullptr};
  SymbolStack encoder_stack{nullptr};
  SymbolStack decoder_stack{nullptr};
};
TORCH_MODULE(Mem);

EntropyParams estimate_entropy_params(Mem& mem, const Latent& y,
                                      const std::optional<FeatureMap>& temporal,
                                      EstimationMode mode);

/// Mean Gaussian negative log-likelihood (nats per element).
torch::Tensor gaussian_nll(const torch::Tensor& y, const EntropyParams& params);

/// B×C×3: spatial means of μ, of σ², and of 0.5·ln(2πe·σ²).
torch::Tensor channel_entropy_summary(const EntropyParams& params);

/// Straight-through Gumbel-Softmax over (keep, drop) logits (train) or argmax
/// (eval). The forward value is exactly one-hot.
torch::Tensor gumbel_keep(const torch::Tensor& logits, double tau, PolicyMode mode, uint64_t seed);

PolicyDecision policy_mask(Mem& mem, const torch::Tensor& summary, double tau, PolicyMode mode,
                           uint64_t seed, uint32_t frame_index = 0);

/// A constant decision (entropy pretraining, fixed-width ablation, tests).
PolicyDecision forced_decision(const std::vector<Mask>& masks);

/// Masks ỹ, drops zero channels and power-normalizes each frame's symbols.
std::vector<TransmitPayload> pack_symbols(const torch::Tensor& ytilde,
                                          const PolicyDecision& decision, double power,
                                          bool keep_gradient_companions);

std::vector<TransmitPayload> mem_encode(Mem& mem, const Latent& y, const PolicyDecision& decision,
                                        double power, bool keep_gradient_companions = false);

/// Scatters received symbols back to their channels (zeros elsewhere).
torch::Tensor unpack_symbols(const std::vector<TransmitPayload>& received, int64_t channels);

Latent mem_decode(Mem& mem, const std::vector<TransmitPayload>& received, int64_t expected_channels,
                  LatentKind kind = LatentKind::kFrame);

/// Wire format: "JM" magic (0x4A 0x4D) | frame_index u32 LE | C u16 LE |
/// bitmap, channel i at byte i/8 bit i%8, zero-padded.
std::vector<uint8_t> serialize_mask(const Mask& mask);
Mask deserialize_mask(const std::vector<uint8_t>& bytes);
std::size_t serialized_mask_size(std::size_t channels);

/// Sets the decoder stack to the exact inverse of the encoder stack with the
/// GDN reduced to identity (γ = 0, β = 1). Test configuration only.
void tie_inverse_stacks(Mem& mem);

}  // namespace jscc::mem
