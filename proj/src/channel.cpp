#include "jscc/channel.hpp"

#include <ATen/CPUGeneratorImpl.h>

#include <cmath>

#include "jscc/error.hpp"

namespace jscc::channel {

std::string to_string(Kind kind) { return kind == Kind::kAwgn ? "awgn" : "rayleigh"; }

Kind kind_from_string(const std::string& name) {
  if (name == "awgn") return Kind::kAwgn;
  if (name == "rayleigh") return Kind::kRayleigh;
  fail(ErrorKind::kConfig, "unknown channel kind '" + name + "' (expected awgn or rayleigh)");
}

uint64_t mix_seed(uint64_t a, uint64_t b) {
  uint64_t z = a + 0x9e3779b97f4a7c15ULL * (b + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

double sigma_from_csnr(double csnr_db) {
  require(std::isfinite(csnr_db), ErrorKind::kInvalidArgument, "CSNR must be finite");
  return std::pow(10.0, -csnr_db / 10.0);
}

torch::Tensor power_gain(const torch::Tensor& s, double power) {
  require(power > 0.0, ErrorKind::kInvalidArgument, "channel power must be positive");
  auto one = torch::ones({}, s.options().requires_grad(false));
  if (s.numel() == 0) return one;
  constexpr double kDelta = 1e-12;
  const auto energy = s.pow(2).sum();
  if (energy.item<double>() == 0.0) return one;
  const auto length = static_cast<double>(s.numel());
  return torch::sqrt(power * length / energy.clamp_min(kDelta));
}

torch::Tensor power_normalize(const torch::Tensor& s, double power) {
  if (s.numel() == 0) return s;
  return s * power_gain(s, power);
}

torch::Tensor awgn(const torch::Tensor& s, double sigma2, uint64_t seed) {
  require(sigma2 >= 0.0, ErrorKind::kInvalidArgument, "noise variance must be non-negative");
  if (sigma2 == 0.0 || s.numel() == 0) return s;
  auto gen = at::make_generator<at::CPUGeneratorImpl>(seed);
  auto noise = torch::randn(s.sizes(), gen, s.options().requires_grad(false));
  return s + std::sqrt(sigma2) * noise;
}

std::complex<double> draw_fading(uint64_t seed) {
  auto gen = at::make_generator<at::CPUGeneratorImpl>(mix_seed(seed, 0xfade));
  auto h = torch::randn({2}, gen, torch::kFloat64);
  return {h[0].item<double>() / std::sqrt(2.0), h[1].item<double>() / std::sqrt(2.0)};
}

torch::Tensor rayleigh(const torch::Tensor& s, double sigma2, uint64_t seed,
                       std::optional<std::complex<double>> forced_h) {
  require(s.numel() % 2 == 0, ErrorKind::kInvalidArgument,
          "rayleigh channel needs an even number of real symbols");
  require(sigma2 >= 0.0, ErrorKind::kInvalidArgument, "noise variance must be non-negative");
  if (s.numel() == 0) return s;

  auto h = forced_h ? *forced_h : draw_fading(seed);
  const double mag = std::abs(h);
  if (mag < kFadingClamp) h = mag == 0.0 ? std::complex<double>(kFadingClamp, 0.0)
                                         : h * (kFadingClamp / mag);

  // x̂ = (h·x + n) / h = x + n / h, per complex pair.
  auto pairs = s.reshape({-1, 2});
  auto eq = pairs;
  if (sigma2 > 0.0) {
    auto gen = at::make_generator<at::CPUGeneratorImpl>(seed);
    auto n = torch::randn(pairs.sizes(), gen, s.options().requires_grad(false)) *
             std::sqrt(sigma2);
    const auto inv = 1.0 / h;
    auto n_re = n.select(1, 0);
    auto n_im = n.select(1, 1);
    auto q_re = n_re * inv.real() - n_im * inv.imag();
    auto q_im = n_re * inv.imag() + n_im * inv.real();
    eq = pairs + torch::stack({q_re, q_im}, 1);
  }
  return eq.reshape(s.sizes());
}

ChannelSymbols transmit(const ChannelSymbols& s, const ChannelConfig& config, uint64_t stream) {
  if (config.noiseless) return s;
  const double sigma2 = sigma_from_csnr(config.csnr_db);
  const auto seed = mix_seed(mix_seed(config.seed, static_cast<uint64_t>(s.frame_index)), stream);
  auto out = config.kind == Kind::kAwgn ? awgn(s.values, sigma2, seed)
                                        : rayleigh(s.values, sigma2, seed);
  return ChannelSymbols{out, s.frame_index};
}

std::vector<uint8_t> side_channel(const std::vector<uint8_t>& payload) { return payload; }

}  // namespace jscc::channel
