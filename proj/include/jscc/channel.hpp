#pragma once

#include <complex>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <torch/torch.h>

namespace jscc::channel {

enum class Kind { kAwgn, kRayleigh };

std::string to_string(Kind kind);
Kind kind_from_string(const std::string& name);

struct ChannelConfig {
  Kind kind = Kind::kAwgn;
  double csnr_db = 10.0;
  double power = 1.0;
  uint64_t seed = 0;
  /// Treat the channel as ideal regardless of csnr_db.
  bool noiseless = false;
};

/// Flat real symbol vector; one element is one channel use.
struct ChannelSymbols {
  torch::Tensor values;
  int64_t frame_index = 0;
};

/// Lower bound on |h| before zero-forcing equalization.
inline constexpr double kFadingClamp = 0.05;

/// Noise variance for a CSNR in dB at unit signal power.
double sigma_from_csnr(double csnr_db);

/// Gain sqrt(P·L / max(‖s‖², δ)) that brings `s` to mean power P (a 0-dim
/// tensor, differentiable). Returns 1 for the empty and the all-zero vector.
torch::Tensor power_gain(const torch::Tensor& s, double power = 1.0);

/// Scales `s` to mean power `power`. Differentiable; the all-zero and the empty
/// vector are returned unchanged.
torch::Tensor power_normalize(const torch::Tensor& s, double power = 1.0);

torch::Tensor awgn(const torch::Tensor& s, double sigma2, uint64_t seed);

/// Block-fading coefficient for one frame, CN(0, 1).
std::complex<double> draw_fading(uint64_t seed);

/// Block Rayleigh fading over consecutive (re, im) pairs, followed by
/// zero-forcing equalization with perfect CSI. `forced_h` bypasses the draw.
torch::Tensor rayleigh(const torch::Tensor& s, double sigma2, uint64_t seed,
                       std::optional<std::complex<double>> forced_h = std::nullopt);

/// Applies the configured channel to one payload. `stream` decorrelates the
/// noise of different payloads that share a config seed.
ChannelSymbols transmit(const ChannelSymbols& s, const ChannelConfig& config, uint64_t stream);

/// Ideal digital side channel for mask bytes.
std::vector<uint8_t> side_channel(const std::vector<uint8_t>& payload);

/// Deterministic seed mixing (splitmix64).
uint64_t mix_seed(uint64_t a, uint64_t b);

}  // namespace jscc::channel
