#include <cmath>
#include <numbers>
#include <random>

#include <gtest/gtest.h>

#include "jscc/channel.hpp"
#include "jscc/error.hpp"
#include "jscc/mem.hpp"
#include "test_util.hpp"

using namespace jscc;
using namespace jscc::mem;

namespace {

Mem compact_mem(bool temporal = false) {
  torch::manual_seed(5);
  const auto arch = jscc::testing::compact_arch();
  return Mem(arch.latent_channels, arch, temporal);
}

Mask random_mask(std::size_t c, std::mt19937& rng) {
  Mask m{std::vector<uint8_t>(c), static_cast<uint32_t>(rng())};
  for (auto& b : m.bits) b = static_cast<uint8_t>(rng() & 1u);
  return m;
}

}  // namespace

TEST(Mask, Helpers) {
  auto m = Mask::first_n(6, 2, 9);
  EXPECT_EQ(m.popcount(), 2);
  EXPECT_EQ(m.kept_indices(), (std::vector<int64_t>{0, 1}));
  EXPECT_EQ(m.frame_index, 9u);
  EXPECT_EQ(Mask::all(5, true).popcount(), 5);
  EXPECT_EQ(Mask::all(5, false).popcount(), 0);
}

TEST(MaskWire, SixtyFourChannelsIsSixteenBytes) {
  EXPECT_EQ(serialized_mask_size(64), 16u);
  EXPECT_EQ(serialize_mask(Mask::all(64, true)).size(), 16u);
  EXPECT_EQ(serialized_mask_size(1), 9u);
  EXPECT_EQ(serialized_mask_size(500), 8u + 63u);
}

TEST(MaskWire, BitLayout) {
  Mask m{std::vector<uint8_t>(10, 0), 0x01020304u};
  m.bits[0] = 1;
  m.bits[3] = 1;
  m.bits[9] = 1;
  const auto bytes = serialize_mask(m);
  ASSERT_EQ(bytes.size(), 10u);
  EXPECT_EQ(bytes[0], 0x4A);
  EXPECT_EQ(bytes[1], 0x4D);
  EXPECT_EQ(bytes[2], 0x04);
  EXPECT_EQ(bytes[5], 0x01);
  EXPECT_EQ(bytes[6], 10);
  EXPECT_EQ(bytes[7], 0);
  EXPECT_EQ(bytes[8], 0x09);
  EXPECT_EQ(bytes[9], 0x02);
}

TEST(MaskWire, RoundTripRandom) {
  std::mt19937 rng(17);
  for (std::size_t c : {1u, 7u, 8u, 32u, 64u, 500u}) {
    for (int i = 0; i < 200; ++i) {
      const auto m = random_mask(c, rng);
      EXPECT_EQ(deserialize_mask(serialize_mask(m)), m);
    }
  }
}

TEST(MaskWire, MalformedRecordsAreFormatErrors) {
  auto bytes = serialize_mask(Mask::first_n(12, 3));
  auto expect_format = [](const std::vector<uint8_t>& b) {
    try {
      deserialize_mask(b);
      ADD_FAILURE() << "accepted a malformed record";
    } catch (const Error& e) {
      EXPECT_EQ(e.kind(), ErrorKind::kFormat);
    }
  };
  expect_format({0x4A, 0x4D, 0});
  auto bad_magic = bytes;
  bad_magic[0] = 0;
  expect_format(bad_magic);
  auto short_body = bytes;
  short_body.pop_back();
  expect_format(short_body);
  auto padding = bytes;
  padding.back() |= 0x80;
  expect_format(padding);
}

TEST(EntropySummary, HandValues) {
  auto mu = torch::full({1, 2, 4, 4}, 0.25);
  auto sigma2 = torch::ones({1, 2, 4, 4});
  sigma2[0][1].fill_(std::numbers::e / (2.0 * std::numbers::pi));
  const auto s = channel_entropy_summary({mu, sigma2});
  ASSERT_EQ(s.sizes(), (std::vector<int64_t>{1, 2, 3}));
  EXPECT_NEAR(s[0][0][0].item<double>(), 0.25, 1e-6);
  EXPECT_NEAR(s[0][0][1].item<double>(), 1.0, 1e-6);
  EXPECT_NEAR(s[0][0][2].item<double>(), 1.4189385, 1e-5);
  EXPECT_NEAR(s[0][1][2].item<double>(), 1.0, 1e-5);
}

TEST(GaussianNll, HandValue) {
  auto y = torch::zeros({1, 1, 2, 2});
  EXPECT_NEAR(gaussian_nll(y, {torch::zeros_like(y), torch::ones_like(y)}).item<double>(),
              0.5 * std::log(2.0 * std::numbers::pi), 1e-6);
  EXPECT_NEAR(gaussian_nll(y + 2.0, {torch::zeros_like(y), torch::ones_like(y)}).item<double>(),
              0.5 * std::log(2.0 * std::numbers::pi) + 2.0, 1e-6);
}

TEST(GumbelKeep, ForwardIsBinary) {
  auto logits = torch::randn({3, 40, 2}, torch::requires_grad());
  const auto keep = gumbel_keep(logits, 0.7, PolicyMode::kTrain, 4);
  EXPECT_TRUE(torch::logical_or(keep == 0, keep == 1).all().item<bool>());
  const auto eval = gumbel_keep(logits, 0.7, PolicyMode::kEval, 4);
  EXPECT_TRUE(torch::equal(eval, (logits.select(-1, 0) > logits.select(-1, 1)).to(torch::kFloat32)));
}

TEST(GumbelKeep, SampleFrequencyMatchesSoftmax) {
  // Gumbel-max sampling keeps with probability softmax(logits)[keep] at any τ.
  auto logits = torch::tensor({1.0f, 0.0f}).view({1, 1, 2}).expand({1, 4000, 2}).contiguous();
  const double expected = std::exp(1.0) / (1.0 + std::exp(1.0));
  const double freq = gumbel_keep(logits, 2.0, PolicyMode::kTrain, 11).mean().item<double>();
  EXPECT_NEAR(freq, expected, 0.025);
  EXPECT_TRUE(torch::equal(gumbel_keep(logits, 2.0, PolicyMode::kTrain, 11),
                           gumbel_keep(logits, 2.0, PolicyMode::kTrain, 11)));
}

TEST(Policy, StraightThroughGradients) {
  auto mem = compact_mem();
  const int64_t c = mem->latent_channels;
  auto ytilde = torch::randn({1, c, 4, 4}, torch::requires_grad());
  {
    torch::NoGradGuard guard;
    // Alternate strong keep and drop preferences so both branches are exercised.
    mem->policy->channel_bias.zero_();
    for (int64_t j = 0; j < c; ++j) mem->policy->channel_bias[j][0] = j % 2 ? 4.0 : -4.0;
  }
  auto summary = torch::rand({1, c, 3}) + 0.1;
  const auto d = policy_mask(mem, summary, 1.0, PolicyMode::kTrain, 3);
  d.logits.retain_grad();
  ASSERT_GT(d.masks[0].popcount(), 0);
  ASSERT_LT(d.masks[0].popcount(), c);

  const auto sent = pack_symbols(ytilde, d, 1.0, true);
  auto dense = unpack_symbols(sent, c);
  torch::manual_seed(8);
  (dense * torch::randn_like(dense)).sum().backward();

  EXPECT_GT(d.logits.grad().abs().sum().item<double>(), 0.0);
  const auto g = ytilde.grad()[0];
  for (int64_t j = 0; j < c; ++j) {
    const double gj = g[j].abs().sum().item<double>();
    if (d.masks[0].bits[static_cast<std::size_t>(j)]) {
      EXPECT_GT(gj, 0.0) << "kept channel " << j;
    } else {
      EXPECT_EQ(gj, 0.0) << "dropped channel " << j;
    }
  }
}

TEST(PackSymbols, LengthPowerAndScatter) {
  const int64_t c = 8;
  auto y = torch::randn({2, c, 4, 4});
  std::vector<Mask> masks{Mask::first_n(c, 3), Mask::all(c, false)};
  masks[0].bits[7] = 1;
  const auto sent = pack_symbols(y, forced_decision(masks), 1.0, false);
  ASSERT_EQ(sent.size(), 2u);
  EXPECT_EQ(sent[0].symbols.numel(), 4 * 16);
  EXPECT_NEAR(sent[0].symbols.pow(2).mean().item<double>(), 1.0, 1e-5);
  EXPECT_EQ(sent[1].symbols.numel(), 0);

  const auto dense = unpack_symbols(sent, c);
  EXPECT_EQ(dense.sizes(), y.sizes());
  EXPECT_TRUE(torch::equal(dense[0][5], torch::zeros({4, 4})));
  EXPECT_TRUE(torch::equal(dense[1], torch::zeros({c, 4, 4})));
  const double gain = channel::power_gain(y[0].index_select(0, torch::tensor({0, 1, 2, 7})), 1.0).item<double>();
  EXPECT_TRUE(torch::allclose(dense[0][7], y[0][7] * gain, 1e-5, 1e-5));
}

TEST(PackSymbols, InconsistentPayloadRejected) {
  auto sent = pack_symbols(torch::randn({1, 4, 2, 2}), forced_decision({Mask::all(4, true)}), 1.0, false);
  EXPECT_THROW(unpack_symbols(sent, 5), Error);
  sent[0].symbols = sent[0].symbols.narrow(0, 0, 3);
  EXPECT_THROW(unpack_symbols(sent, 4), Error);
}

TEST(Mem, TiedStacksRoundTrip) {
  auto mem = compact_mem();
  tie_inverse_stacks(mem);
  torch::NoGradGuard guard;
  const int64_t c = mem->latent_channels;
  Latent y{torch::randn({1, c, 4, 4})};
  // Choosing the power equal to the stack output's power makes the gain one.
  const double power = mem->encoder_stack->forward(y.values).pow(2).mean().item<double>();
  const auto sent = mem_encode(mem, y, forced_decision({Mask::all(static_cast<std::size_t>(c), true)}), power);
  const auto back = mem_decode(mem, sent, c);
  EXPECT_TRUE(torch::allclose(back.values, y.values, 1e-3, 1e-3));
}

TEST(EntropyModel, ContextIsRasterCausal) {
  auto mem = compact_mem();
  const int64_t c = mem->latent_channels;
  {
    // The output layer starts at zero, which would make the check vacuous.
    torch::NoGradGuard guard;
    mem->entropy->fuse_out->weight.normal_(0.0, 0.1);
  }
  auto y = torch::randn({1, c, 4, 4});
  auto hyper = mem->entropy->hyper_features(y).detach();
  for (int64_t p = 0; p < 16; ++p) {
    auto yv = y.clone().requires_grad_(true);
    auto params = mem->entropy->fuse(hyper, mem->entropy->context_features(yv), torch::Tensor());
    const auto r = p / 4, col = p % 4;
    (params.mu.select(2, r).select(2, col).sum() + params.sigma2.select(2, r).select(2, col).sum()).backward();
    const auto g = yv.grad().abs().sum(1)[0].reshape({-1});
    for (int64_t q = p; q < 16; ++q) EXPECT_EQ(g[q].item<double>(), 0.0) << "output " << p << " sees " << q;
    if (p > 0) EXPECT_GT(g.narrow(0, 0, p).sum().item<double>(), 0.0) << "output " << p << " sees no context";
  }
}

TEST(EntropyModel, ParametersArePositiveAndShaped) {
  auto mem = compact_mem(true);
  const auto arch = jscc::testing::compact_arch();
  Latent y{torch::randn({2, mem->latent_channels, 4, 4})};
  FeatureMap t{torch::randn({2, arch.temporal_prior_channels, 4, 4}), 16};
  for (auto mode : {EstimationMode::kParallel, EstimationMode::kAutoregressive}) {
    const auto p = estimate_entropy_params(mem, y, t, mode);
    EXPECT_EQ(p.mu.sizes(), y.values.sizes());
    EXPECT_GE(p.sigma2.min().item<double>(), kSigma2Floor * 0.999);
  }
}
