#include "asconv/resize.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include "asconv/error.hpp"

namespace asconv {

double cubic_kernel(double t, double a) {
  const double x = std::fabs(t);
  if (x <= 1.0) return ((a + 2.0) * x - (a + 3.0)) * x * x + 1.0;
  if (x < 2.0) return ((a * x - 5.0 * a) * x + 8.0 * a) * x - 4.0 * a;
  return 0.0;
}

std::array<double, 4> bicubic_taps(double phase, double a) {
  return {cubic_kernel(phase + 1.0, a), cubic_kernel(phase, a), cubic_kernel(1.0 - phase, a),
          cubic_kernel(2.0 - phase, a)};
}

namespace {

struct Contribution {
  std::size_t first = 0;            // offset into indices/weights
  std::size_t count = 0;
};

struct AxisPlan {
  std::vector<Contribution> outputs;
  std::vector<std::size_t> indices;
  std::vector<double> weights;
};

std::size_t clamp_index(long i, std::size_t n) {
  return static_cast<std::size_t>(std::clamp<long>(i, 0, static_cast<long>(n) - 1));
}

AxisPlan plan_axis(std::size_t in, std::size_t out) {
  AxisPlan plan;
  plan.outputs.resize(out);
  const double ratio = static_cast<double>(in) / static_cast<double>(out);
  for (std::size_t o = 0; o < out; ++o) {
    const double x = (static_cast<double>(o) + 0.5) * ratio - 0.5;
    Contribution& c = plan.outputs[o];
    c.first = plan.indices.size();
    if (out >= in) {
      const double base = std::floor(x);
      const auto taps = bicubic_taps(x - base);
      for (int k = 0; k < 4; ++k) {
        plan.indices.push_back(clamp_index(static_cast<long>(base) - 1 + k, in));
        plan.weights.push_back(taps[k]);
      }
      c.count = 4;
    } else {
      const double shrink = 1.0 / ratio;
      const double support = 2.0 * ratio;
      const long lo = static_cast<long>(std::floor(x - support)) + 1;
      const long hi = static_cast<long>(std::floor(x + support));
      double total = 0.0;
      for (long i = lo; i <= hi; ++i) {
        const double w = cubic_kernel((x - static_cast<double>(i)) * shrink);
        plan.indices.push_back(clamp_index(i, in));
        plan.weights.push_back(w);
        total += w;
      }
      c.count = static_cast<std::size_t>(hi - lo + 1);
      for (std::size_t k = 0; k < c.count; ++k) plan.weights[c.first + k] /= total;
    }
  }
  return plan;
}

}  // namespace

template <typename Real>
Tensor<Real> bicubic_resize(const Tensor<Real>& img, std::size_t out_h, std::size_t out_w) {
  if (img.rank() != 4) throw ShapeError("bicubic_resize: expected [B,C,H,W], got " + img.shape().str());
  if (out_h == 0 || out_w == 0) throw ValueError("bicubic_resize: target extents must be positive");
  const std::size_t planes = img.dim(0) * img.dim(1), h = img.dim(2), w = img.dim(3);
  const AxisPlan px = plan_axis(w, out_w);
  const AxisPlan py = plan_axis(h, out_h);

  // Horizontal pass in double, then vertical.
  std::vector<double> tmp(planes * h * out_w);
  const Real* src = img.data().data();
  for (std::size_t p = 0; p < planes; ++p) {
    for (std::size_t y = 0; y < h; ++y) {
      const Real* row = src + (p * h + y) * w;
      double* dst = tmp.data() + (p * h + y) * out_w;
      for (std::size_t o = 0; o < out_w; ++o) {
        const Contribution& c = px.outputs[o];
        double acc = 0.0;
        for (std::size_t k = 0; k < c.count; ++k) {
          acc += px.weights[c.first + k] * static_cast<double>(row[px.indices[c.first + k]]);
        }
        dst[o] = acc;
      }
    }
  }
  Tensor<Real> out(Shape{img.dim(0), img.dim(1), out_h, out_w});
  Real* dst = out.data().data();
  for (std::size_t p = 0; p < planes; ++p) {
    for (std::size_t o = 0; o < out_h; ++o) {
      const Contribution& c = py.outputs[o];
      for (std::size_t x = 0; x < out_w; ++x) {
        double acc = 0.0;
        for (std::size_t k = 0; k < c.count; ++k) {
          acc += py.weights[c.first + k] * tmp[(p * h + py.indices[c.first + k]) * out_w + x];
        }
        dst[(p * out_h + o) * out_w + x] = static_cast<Real>(acc);
      }
    }
  }
  return out;
}

template Tensor<float> bicubic_resize<float>(const Tensor<float>&, std::size_t, std::size_t);
template Tensor<double> bicubic_resize<double>(const Tensor<double>&, std::size_t, std::size_t);

}  // namespace asconv
