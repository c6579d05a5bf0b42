#pragma once

#include "asconv/tensor.hpp"

namespace asconv {

/// Reported for identical images so scores stay finite.
inline constexpr double kPsnrCap = 100.0;

/// -10 log10(MSE) over every pixel and channel with peak 1. No border crop.
template <typename Real>
double psnr_rgb(const Tensor<Real>& a, const Tensor<Real>& b);

/// Mean SSIM over channels and all valid positions of an 11x11 Gaussian
/// window (sigma 1.5), K1 = 0.01, K2 = 0.03, dynamic range 1. Inputs
/// [B, C, H, W] with H, W >= 11; the mean also runs over the batch.
template <typename Real>
double ssim_rgb(const Tensor<Real>& a, const Tensor<Real>& b);

/// 2^(psnr - psnr_bicubic) * 2 / (c * sqrt(runtime_ms)).
double efficiency_score(double psnr, double psnr_bicubic, double runtime_ms, double c = 0.1);

}  // namespace asconv
