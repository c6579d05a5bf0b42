#pragma once

#include <array>
#include <cstddef>

#include "asconv/tensor.hpp"

namespace asconv {

inline constexpr double kBicubicA = -0.5;

/// Cubic convolution kernel W(t) with parameter a; support |t| < 2.
double cubic_kernel(double t, double a = kBicubicA);

/// The four tap weights W(phase + 1), W(phase), W(1 - phase), W(2 - phase)
/// applied to samples floor(x) - 1 .. floor(x) + 2, where phase = x - floor(x).
std::array<double, 4> bicubic_taps(double phase, double a = kBicubicA);

/// Separable bicubic resampling of [B, C, H, W] to [B, C, out_h, out_w].
/// Output pixel o maps to source coordinate (o + 0.5) * in / out - 0.5 (pixel
/// centers aligned). Samples outside the image clamp to the edge. When an
/// axis shrinks, the kernel is stretched by in / out and renormalized, which
/// low-pass filters before decimation. Throws ValueError on zero extents.
template <typename Real>
Tensor<Real> bicubic_resize(const Tensor<Real>& img, std::size_t out_h, std::size_t out_w);

}  // namespace asconv
