#include "jscc/metrics.hpp"

#include <array>
#include <cmath>
#include <iomanip>
#include <ostream>

#include "jscc/error.hpp"

namespace jscc::metrics {

namespace F = torch::nn::functional;

namespace {

constexpr std::array<double, 5> kScaleWeights{0.0448, 0.2856, 0.3001, 0.2363, 0.1333};
constexpr int64_t kWindow = 11;
constexpr double kWindowSigma = 1.5;
constexpr double kC1 = 0.01 * 0.01;
constexpr double kC2 = 0.03 * 0.03;

void check_same_shape(const Frame& x, const Frame& y) {
  require(x.pixels.sizes() == y.pixels.sizes(), ErrorKind::kShapeMismatch,
          "metric inputs differ in shape");
}

torch::Tensor gaussian_blur(const torch::Tensor& img, const torch::Tensor& kernel) {
  const auto c = img.size(1);
  auto kx = kernel.view({1, 1, 1, kWindow}).repeat({c, 1, 1, 1});
  auto ky = kernel.view({1, 1, kWindow, 1}).repeat({c, 1, 1, 1});
  auto h = F::conv2d(img, kx, F::Conv2dFuncOptions().groups(c));
  return F::conv2d(h, ky, F::Conv2dFuncOptions().groups(c));
}

/// Returns (mean SSIM, mean contrast-structure) for one scale.
std::pair<double, double> ssim_terms(const torch::Tensor& x, const torch::Tensor& y,
                                     const torch::Tensor& kernel) {
  auto mx = gaussian_blur(x, kernel);
  auto my = gaussian_blur(y, kernel);
  auto sxx = gaussian_blur(x * x, kernel) - mx * mx;
  auto syy = gaussian_blur(y * y, kernel) - my * my;
  auto sxy = gaussian_blur(x * y, kernel) - mx * my;
  auto cs = (2.0 * sxy + kC2) / (sxx + syy + kC2);
  auto lum = (2.0 * mx * my + kC1) / (mx * mx + my * my + kC1);
  return {(lum * cs).mean().item<double>(), cs.mean().item<double>()};
}

}  // namespace

double psnr(const Frame& x, const Frame& y) {
  check_same_shape(x, y);
  const double mse =
      (x.pixels.to(torch::kFloat64) - y.pixels.to(torch::kFloat64)).pow(2).mean().item<double>();
  if (mse <= 0.0) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(1.0 / mse));
}

int effective_scales(int64_t height, int64_t width, int requested) {
  const auto side = std::min(height, width);
  require(side >= kWindow, ErrorKind::kInvalidArgument,
          "MS-SSIM needs at least an 11x11 image");
  int scales = std::clamp(requested, 1, static_cast<int>(kScaleWeights.size()));
  while (scales > 1 && side < (int64_t{1} << (scales - 1)) * kWindow) --scales;
  return scales;
}

double ms_ssim(const Frame& x, const Frame& y, int scales) {
  check_same_shape(x, y);
  const int used = effective_scales(x.height(), x.width(), scales);

  auto coords = torch::arange(kWindow, torch::kFloat64) - static_cast<double>(kWindow / 2);
  auto kernel = torch::exp(-coords.pow(2) / (2.0 * kWindowSigma * kWindowSigma));
  kernel = kernel / kernel.sum();

  double weight_sum = 0.0;
  for (int i = 0; i < used; ++i) weight_sum += kScaleWeights[static_cast<std::size_t>(i)];

  auto a = x.pixels.detach().to(torch::kFloat64).unsqueeze(0);
  auto b = y.pixels.detach().to(torch::kFloat64).unsqueeze(0);
  double score = 1.0;
  for (int s = 0; s < used; ++s) {
    const double w = kScaleWeights[static_cast<std::size_t>(s)] / weight_sum;
    auto [ssim, cs] = ssim_terms(a, b, kernel);
    const double term = s + 1 == used ? ssim : cs;
    score *= std::pow(std::max(term, 0.0), w);
    if (s + 1 < used) {
      a = F::avg_pool2d(a, F::AvgPool2dFuncOptions(2));
      b = F::avg_pool2d(b, F::AvgPool2dFuncOptions(2));
    }
  }
  return std::clamp(score, 0.0, 1.0);
}

double cbr_from_symbols(int64_t symbols, int64_t height, int64_t width) {
  require(height > 0 && width > 0, ErrorKind::kInvalidArgument, "frame size must be positive");
  return static_cast<double>(symbols) / (3.0 * static_cast<double>(height) * static_cast<double>(width));
}

double frame_cbr(const mem::Mask& mask, int64_t height, int64_t width) {
  require(height % 16 == 0 && width % 16 == 0, ErrorKind::kInvalidArgument,
          "frame_cbr needs sizes that are multiples of 16");
  return cbr_from_symbols(mask.popcount() * (height / 16) * (width / 16), height, width);
}

double gop_cbr(const std::vector<FrameStats>& stats) {
  require(!stats.empty(), ErrorKind::kInvalidArgument, "gop_cbr of an empty list");
  double sum = 0.0;
  for (const auto& s : stats) sum += s.cbr;
  return sum / static_cast<double>(stats.size());
}

std::string stats_csv_header() {
  return "frame_index,frame_type,cbr,frame_cbr,mv_cbr,cbr_includes_mv,psnr_db,ms_ssim,"
         "side_channel_bytes";
}

void write_stats_csv(std::ostream& os, const std::vector<FrameStats>& stats) {
  os << stats_csv_header() << '\n';
  os << std::setprecision(10);
  for (const auto& s : stats) {
    os << s.frame_index << ',' << (s.is_iframe ? 'I' : 'P') << ',' << s.cbr << ',' << s.frame_cbr
       << ',' << s.mv_cbr << ",1," << s.psnr_db << ',' << s.ms_ssim << ',' << s.side_channel_bytes
       << '\n';
  }
}

}  // namespace jscc::metrics
