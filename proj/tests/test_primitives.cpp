#include <gtest/gtest.h>

#include "gradcheck.hpp"
#include "jscc/error.hpp"
#include "jscc/flops.hpp"
#include "jscc/primitives.hpp"

using namespace jscc;
using namespace jscc::nn;
using jscc::testing::gradient_relative_error;

TEST(Warp, ZeroFlowIsIdentity) {
  auto f = torch::rand({2, 4, 8, 8});
  EXPECT_TRUE(torch::allclose(warp(f, torch::zeros({2, 2, 8, 8})), f, 1e-6, 1e-6));
}

TEST(Warp, IntegerShiftReplicatesBorder) {
  // out(p) = f(p + flow) with flow dx = 1: every row moves one pixel left and
  // the last column is replicated.
  auto f = torch::arange(16, torch::kFloat32).reshape({1, 1, 4, 4});
  auto flow = torch::zeros({1, 2, 4, 4});
  flow.select(1, 0).fill_(1.0);
  auto out = warp(f, flow);
  auto expected = torch::tensor({1.f, 2.f, 3.f, 3.f, 5.f, 6.f, 7.f, 7.f, 9.f, 10.f, 11.f, 11.f,
                                 13.f, 14.f, 15.f, 15.f})
                      .reshape({1, 1, 4, 4});
  EXPECT_TRUE(torch::allclose(out, expected, 1e-5, 1e-5));
}

TEST(Warp, GradientWrtFlowMatchesFiniteDifferences) {
  torch::manual_seed(1);
  auto ys = torch::linspace(0, 1, 8).view({1, 1, 8, 1});
  auto xs = torch::linspace(0, 1, 8).view({1, 1, 1, 8});
  auto feature = torch::cat({torch::sin(3 * xs + ys), torch::cos(2 * ys - xs), xs * ys, xs + ys * ys}, 1)
                     .expand({1, 4, 8, 8})
                     .contiguous();
  // Fractional parts stay away from integers so the bilinear kinks are not crossed.
  auto flow = (torch::rand({1, 2, 8, 8}) * 0.4 + 0.3) * torch::where(torch::rand({1, 2, 8, 8}) > 0.5, 1.0, -1.0);
  const double err = gradient_relative_error([&](const torch::Tensor& v) { return warp(feature, v); },
                                             flow, 1e-2);
  EXPECT_LT(err, 1e-3);
}

TEST(Gdn, IdentityParameters) {
  Gdn g(4);
  g->set_effective(torch::ones({4}), torch::zeros({4, 4}));
  auto x = torch::randn({1, 4, 3, 3});
  EXPECT_TRUE(torch::allclose(g->forward(x), x, 1e-5, 1e-5));
}

TEST(Gdn, HandValue) {
  Gdn g(1);
  g->set_effective(torch::ones({1}), torch::ones({1, 1}));
  auto y = g->forward(torch::ones({1, 1, 1, 1}));
  EXPECT_NEAR(y.item<double>(), 1.0 / std::sqrt(2.0), 1e-6);
}

TEST(Gdn, InverseUndoesForwardForSmallGamma) {
  // With β = 1 the pair is an inverse up to O(γ²·x⁴).
  Gdn g(4), ig(4, true);
  auto gamma = torch::rand({4, 4}) * 1e-3;
  auto x = torch::randn({1, 4, 5, 5}) * 0.1;
  g->set_effective(torch::ones({4}), gamma);
  ig->set_effective(torch::ones({4}), gamma);
  EXPECT_LT((ig->forward(g->forward(x)) - x).abs().max().item<double>(), 1e-4);
}

TEST(Gdn, GradientMatchesFiniteDifferences) {
  torch::manual_seed(2);
  for (bool inverse : {false, true}) {
    Gdn g(4, inverse);
    g->set_effective(torch::rand({4}) + 0.5, torch::rand({4, 4}) * 0.2);
    auto x = torch::randn({1, 4, 8, 8});
    const double err = gradient_relative_error([&](const torch::Tensor& v) { return g->forward(v); }, x, 1e-2);
    EXPECT_LT(err, 1e-2) << (inverse ? "igdn" : "gdn");
  }
}

TEST(Gdn, ParametersStayInDomain) {
  Gdn g(3);
  {
    torch::NoGradGuard guard;
    g->beta_param.fill_(-5.0);
    g->gamma_param.fill_(-5.0);
  }
  EXPECT_GE(g->beta().min().item<double>(), kGdnBetaMin * 0.999);
  EXPECT_GE(g->gamma().min().item<double>(), 0.0);
}

TEST(Subpixel, DocumentedInterleaving) {
  auto x = torch::arange(16, torch::kFloat32).reshape({1, 4, 2, 2});
  auto y = subpixel_upsample(x, 2);
  auto expected = torch::tensor({0.f, 4.f, 1.f, 5.f, 8.f, 12.f, 9.f, 13.f, 2.f, 6.f, 3.f, 7.f,
                                 10.f, 14.f, 11.f, 15.f})
                      .reshape({1, 1, 4, 4});
  EXPECT_TRUE(torch::equal(y, expected));
}

TEST(Subpixel, ShapeAndInverse) {
  auto x = torch::randn({1, 64, 8, 8});
  auto y = subpixel_upsample(x, 2);
  EXPECT_EQ(y.sizes(), (std::vector<int64_t>{1, 16, 16, 16}));
  EXPECT_TRUE(torch::equal(subpixel_upsample(space_to_depth(y, 2), 2), y));
  EXPECT_TRUE(torch::equal(space_to_depth(y, 2), x));
}

TEST(BuildBlock, ResBlockIsIdentityAtInit) {
  auto b = build_block({BlockKind::kResBlock, 8, 8, 1, 3});
  auto x = torch::randn({1, 8, 6, 6});
  EXPECT_TRUE(torch::equal(b.forward(x), x));
}

TEST(BuildBlock, DepthConvParameterCount) {
  const int64_t c = 16, out = 24, k = 3;
  auto b = build_block({BlockKind::kDepthConv, c, out, 1, k});
  EXPECT_EQ(parameter_count(*b.ptr()), c * k * k + c + c * out + out);
}

TEST(BuildBlock, StrideTwoHalves) {
  auto b = build_block({BlockKind::kConv, 3, 8, 2, 3});
  auto y = b.forward(torch::randn({1, 3, 16, 12}));
  EXPECT_EQ(y.size(2), 8);
  EXPECT_EQ(y.size(3), 6);
}

TEST(BuildBlock, RejectsBadSpecs) {
  EXPECT_THROW(build_block({BlockKind::kGdn, 4, 8, 1, 3}), Error);
  EXPECT_THROW(build_block({BlockKind::kConv, 4, 8, 3, 3}), Error);
  EXPECT_THROW(build_block({BlockKind::kConv, 4, 8, 1, 2}), Error);
}

TEST(MacScope, ConvCountIsAnalytic) {
  auto b = build_block({BlockKind::kConv, 3, 64, 1, 3});
  MacScope scope;
  b.forward(torch::zeros({1, 3, 32, 32}));
  EXPECT_EQ(scope.macs(), 64 * 3 * 9 * 32 * 32);
}

TEST(MacScope, NestedScopesBothCount) {
  auto b = build_block({BlockKind::kConv, 2, 2, 1, 1});
  MacScope outer;
  {
    MacScope inner;
    b.forward(torch::zeros({1, 2, 4, 4}));
    EXPECT_EQ(inner.macs(), 2 * 2 * 16);
  }
  EXPECT_EQ(outer.macs(), 2 * 2 * 16);
}

TEST(ClampSte, ForwardClampsGradientPasses) {
  auto x = torch::tensor({-0.5f, 0.5f, 1.5f}).requires_grad_(true);
  auto y = clamp_unit_ste(x);
  EXPECT_TRUE(torch::equal(y.detach(), torch::tensor({0.0f, 0.5f, 1.0f})));
  y.sum().backward();
  EXPECT_TRUE(torch::equal(x.grad(), torch::ones({3})));
}
