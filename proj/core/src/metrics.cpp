#include "asconv/metrics.hpp"

#include <array>
#include <cmath>
#include <vector>

#include "asconv/error.hpp"

namespace asconv {
namespace {

constexpr std::size_t kWindow = 11;
constexpr double kSigma = 1.5;
constexpr double kC1 = 0.01 * 0.01;
constexpr double kC2 = 0.03 * 0.03;

std::array<double, kWindow> gaussian_window() {
  std::array<double, kWindow> g{};
  double total = 0.0;
  for (std::size_t i = 0; i < kWindow; ++i) {
    const double d = static_cast<double>(i) - static_cast<double>(kWindow / 2);
    g[i] = std::exp(-d * d / (2.0 * kSigma * kSigma));
    total += g[i];
  }
  for (auto& v : g) v /= total;
  return g;
}

// Valid-mode separable Gaussian filter of an h x w plane.
std::vector<double> filter_valid(const std::vector<double>& plane, std::size_t h, std::size_t w,
                                 const std::array<double, kWindow>& g) {
  const std::size_t oh = h - kWindow + 1, ow = w - kWindow + 1;
  std::vector<double> rows(h * ow);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < ow; ++x) {
      double acc = 0.0;
      for (std::size_t k = 0; k < kWindow; ++k) acc += g[k] * plane[y * w + x + k];
      rows[y * ow + x] = acc;
    }
  }
  std::vector<double> out(oh * ow);
  for (std::size_t y = 0; y < oh; ++y) {
    for (std::size_t x = 0; x < ow; ++x) {
      double acc = 0.0;
      for (std::size_t k = 0; k < kWindow; ++k) acc += g[k] * rows[(y + k) * ow + x];
      out[y * ow + x] = acc;
    }
  }
  return out;
}

template <typename Real>
void require_same(const Tensor<Real>& a, const Tensor<Real>& b, const char* op) {
  if (!(a.shape() == b.shape())) {
    throw ShapeError(std::string(op) + ": shape mismatch " + a.shape().str() + " vs " +
                     b.shape().str());
  }
}

}  // namespace

template <typename Real>
double psnr_rgb(const Tensor<Real>& a, const Tensor<Real>& b) {
  require_same(a, b, "psnr_rgb");
  if (a.empty()) throw ShapeError("psnr_rgb: empty images");
  double sum = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) {
    const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
    sum += d * d;
  }
  const double mse = sum / static_cast<double>(a.numel());
  if (mse == 0.0) return kPsnrCap;
  return std::min(kPsnrCap, -10.0 * std::log10(mse));
}

template <typename Real>
double ssim_rgb(const Tensor<Real>& a, const Tensor<Real>& b) {
  require_same(a, b, "ssim_rgb");
  if (a.rank() != 4 || a.dim(2) < kWindow || a.dim(3) < kWindow) {
    throw ShapeError("ssim_rgb: need [B,C,H,W] with H,W >= 11, got " + a.shape().str());
  }
  const auto g = gaussian_window();
  const std::size_t planes = a.dim(0) * a.dim(1), h = a.dim(2), w = a.dim(3);
  const std::size_t n = h * w;
  double total = 0.0;
  std::size_t count = 0;
  std::vector<double> x(n), y(n), xx(n), yy(n), xy(n);
  for (std::size_t p = 0; p < planes; ++p) {
    for (std::size_t i = 0; i < n; ++i) {
      x[i] = static_cast<double>(a[p * n + i]);
      y[i] = static_cast<double>(b[p * n + i]);
      xx[i] = x[i] * x[i];
      yy[i] = y[i] * y[i];
      xy[i] = x[i] * y[i];
    }
    const auto mx = filter_valid(x, h, w, g), my = filter_valid(y, h, w, g);
    const auto exx = filter_valid(xx, h, w, g), eyy = filter_valid(yy, h, w, g);
    const auto exy = filter_valid(xy, h, w, g);
    for (std::size_t i = 0; i < mx.size(); ++i) {
      const double vx = exx[i] - mx[i] * mx[i];
      const double vy = eyy[i] - my[i] * my[i];
      const double cov = exy[i] - mx[i] * my[i];
      const double num = (2.0 * mx[i] * my[i] + kC1) * (2.0 * cov + kC2);
      const double den = (mx[i] * mx[i] + my[i] * my[i] + kC1) * (vx + vy + kC2);
      total += num / den;
    }
    count += mx.size();
  }
  return total / static_cast<double>(count);
}

double efficiency_score(double psnr, double psnr_bicubic, double runtime_ms, double c) {
  if (!(runtime_ms > 0.0) || !std::isfinite(runtime_ms)) {
    throw ValueError("efficiency_score: runtime must be positive, got " + std::to_string(runtime_ms));
  }
  if (!(c > 0.0)) throw ValueError("efficiency_score: C must be positive");
  return std::exp2(psnr - psnr_bicubic) * 2.0 / (c * std::sqrt(runtime_ms));
}

template double psnr_rgb<float>(const Tensor<float>&, const Tensor<float>&);
template double psnr_rgb<double>(const Tensor<double>&, const Tensor<double>&);
template double ssim_rgb<float>(const Tensor<float>&, const Tensor<float>&);
template double ssim_rgb<double>(const Tensor<double>&, const Tensor<double>&);

}  // namespace asconv
