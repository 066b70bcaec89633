#include "instructir/metrics.hpp"

#include <cmath>
#include <limits>
#include <string>

#include "instructir/common.hpp"

namespace instructir {

namespace {

constexpr std::int64_t kSsimWindow = 11;

torch::Tensor as_double(const torch::Tensor& t, const char* what) {
  if (t.dim() != 3 || t.size(0) != 3) throw ShapeError(std::string(what) + " must be (3, H, W), got " + c10::str(t.sizes()));
  return t.detach().to(torch::kCPU, torch::kFloat64).contiguous();
}

void check_pair(const torch::Tensor& a, const torch::Tensor& b) {
  if (a.sizes() != b.sizes()) {
    throw ShapeError("metric inputs differ in shape: " + c10::str(a.sizes()) + " vs " + c10::str(b.sizes()));
  }
}

torch::Tensor luma(const torch::Tensor& rgb) {
  return 0.299 * rgb[0] + 0.587 * rgb[1] + 0.114 * rgb[2];
}

torch::Tensor gaussian_window(std::int64_t size, double sigma) {
  auto x = torch::arange(size, torch::kFloat64) - static_cast<double>(size - 1) / 2.0;
  auto g = torch::exp(-(x * x) / (2.0 * sigma * sigma));
  g = g / g.sum();
  return torch::outer(g, g);
}

}  // namespace

double psnr(const torch::Tensor& restored, const torch::Tensor& reference) {
  auto a = as_double(restored, "restored");
  auto b = as_double(reference, "reference");
  check_pair(a, b);
  const double mse = (a - b).pow(2).mean().item<double>();
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(1.0 / mse);
}

double ssim(const torch::Tensor& restored, const torch::Tensor& reference) {
  auto a = as_double(restored, "restored");
  auto b = as_double(reference, "reference");
  check_pair(a, b);
  constexpr double c1 = 0.01 * 0.01;
  constexpr double c2 = 0.03 * 0.03;
  auto x = luma(a);
  auto y = luma(b);
  const auto h = x.size(0);
  const auto w = x.size(1);
  if (h < kSsimWindow || w < kSsimWindow) {
    throw ShapeError("ssim needs at least " + std::to_string(kSsimWindow) + "x" + std::to_string(kSsimWindow) +
                     " pixels, got " + std::to_string(h) + "x" + std::to_string(w));
  }
  auto k = gaussian_window(kSsimWindow, 1.5).unsqueeze(0).unsqueeze(0);
  auto filter = [&](const torch::Tensor& t) { return torch::conv2d(t.unsqueeze(0).unsqueeze(0), k).squeeze(0).squeeze(0); };
  auto mx = filter(x);
  auto my = filter(y);
  auto sxx = filter(x * x) - mx * mx;
  auto syy = filter(y * y) - my * my;
  auto sxy = filter(x * y) - mx * my;
  auto map = ((2 * mx * my + c1) * (2 * sxy + c2)) / ((mx * mx + my * my + c1) * (sxx + syy + c2));
  return map.mean().item<double>();
}

torch::Tensor srgb_to_lab(const torch::Tensor& rgb) {
  auto c = as_double(rgb, "image");
  auto lin = torch::where(c <= 0.04045, c / 12.92, torch::pow((c + 0.055) / 1.055, 2.4));
  auto r = lin[0], g = lin[1], b = lin[2];
  auto X = (0.4124564 * r + 0.3575761 * g + 0.1804375 * b) / 0.95047;
  auto Y = (0.2126729 * r + 0.7151522 * g + 0.0721750 * b) / 1.0;
  auto Z = (0.0193339 * r + 0.1191920 * g + 0.9503041 * b) / 1.08883;
  constexpr double delta = 6.0 / 29.0;
  auto f = [&](const torch::Tensor& t) {
    return torch::where(t > delta * delta * delta, torch::pow(t, 1.0 / 3.0), t / (3 * delta * delta) + 4.0 / 29.0);
  };
  auto fx = f(X), fy = f(Y), fz = f(Z);
  return torch::stack({116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)});
}

double delta_e(const torch::Tensor& restored, const torch::Tensor& reference) {
  auto a = as_double(restored, "restored");
  auto b = as_double(reference, "reference");
  check_pair(a, b);
  auto clip = [](torch::Tensor t, const char* what) {
    if (t.min().item<double>() < 0.0 || t.max().item<double>() > 1.0) {
      warn(std::string(what) + " has values outside [0, 1]; clipping before colour conversion");
      t = t.clamp(0.0, 1.0);
    }
    return t;
  };
  a = clip(a, "restored image");
  b = clip(b, "reference image");
  auto d = srgb_to_lab(a) - srgb_to_lab(b);
  return d.pow(2).sum(0).sqrt().mean().item<double>();
}

}  // namespace instructir
