#include "asconv/layers.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

namespace asconv {
namespace {

void require_image(const Shape& s, const char* op) {
  if (s.rank() != 4) throw ShapeError(std::string(op) + ": expected [B,C,H,W], got " + s.str());
}

}  // namespace

template <typename Real>
Tensor<Real> pixel_unshuffle(const Tensor<Real>& x, std::size_t r) {
  require_image(x.shape(), "pixel_unshuffle");
  if (r == 0) throw ShapeError("pixel_unshuffle: factor must be >= 1");
  const std::size_t batch = x.dim(0), ch = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (h % r != 0 || w % r != 0) {
    throw ShapeError("pixel_unshuffle: spatial size " + std::to_string(h) + "x" +
                     std::to_string(w) + " not divisible by " + std::to_string(r));
  }
  const std::size_t oh = h / r, ow = w / r;
  Tensor<Real> out(Shape{batch, ch * r * r, oh, ow});
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t c = 0; c < ch; ++c) {
      for (std::size_t i = 0; i < r; ++i) {
        for (std::size_t j = 0; j < r; ++j) {
          const std::size_t oc = c * r * r + i * r + j;
          for (std::size_t y = 0; y < oh; ++y) {
            for (std::size_t xx = 0; xx < ow; ++xx) {
              out.at(b, oc, y, xx) = x.at(b, c, y * r + i, xx * r + j);
            }
          }
        }
      }
    }
  }
  return out;
}

template <typename Real>
Tensor<Real> pixel_shuffle(const Tensor<Real>& x, std::size_t r) {
  require_image(x.shape(), "pixel_shuffle");
  if (r == 0) throw ShapeError("pixel_shuffle: factor must be >= 1");
  const std::size_t batch = x.dim(0), ch = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (ch % (r * r) != 0) {
    throw ShapeError("pixel_shuffle: " + std::to_string(ch) + " channels not divisible by " +
                     std::to_string(r * r));
  }
  const std::size_t oc_count = ch / (r * r);
  Tensor<Real> out(Shape{batch, oc_count, h * r, w * r});
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t c = 0; c < oc_count; ++c) {
      for (std::size_t i = 0; i < r; ++i) {
        for (std::size_t j = 0; j < r; ++j) {
          const std::size_t ic = c * r * r + i * r + j;
          for (std::size_t y = 0; y < h; ++y) {
            for (std::size_t xx = 0; xx < w; ++xx) {
              out.at(b, c, y * r + i, xx * r + j) = x.at(b, ic, y, xx);
            }
          }
        }
      }
    }
  }
  return out;
}

template <typename Real>
Tensor<Real> repeat_upscale(const Tensor<Real>& x, std::size_t r) {
  require_image(x.shape(), "repeat_upscale");
  if (r == 0) throw ShapeError("repeat_upscale: factor must be >= 1");
  const std::size_t batch = x.dim(0), ch = x.dim(1), plane = x.dim(2) * x.dim(3);
  const std::size_t rep = r * r;
  Tensor<Real> out(Shape{batch, ch * rep, x.dim(2), x.dim(3)});
  const Real* src = x.data().data();
  Real* dst = out.data().data();
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t c = 0; c < ch; ++c) {
      const Real* p = src + (b * ch + c) * plane;
      for (std::size_t k = 0; k < rep; ++k) {
        std::memcpy(dst + ((b * ch + c) * rep + k) * plane, p, plane * sizeof(Real));
      }
    }
  }
  return out;
}

template <typename Real>
Tensor<Real> repeat_upscale_backward(const Tensor<Real>& grad_out, std::size_t r) {
  require_image(grad_out.shape(), "repeat_upscale_backward");
  const std::size_t rep = r * r;
  if (r == 0 || grad_out.dim(1) % rep != 0) {
    throw ShapeError("repeat_upscale_backward: channels not divisible by r*r");
  }
  const std::size_t batch = grad_out.dim(0), ch = grad_out.dim(1) / rep;
  const std::size_t plane = grad_out.dim(2) * grad_out.dim(3);
  Tensor<Real> gi(Shape{batch, ch, grad_out.dim(2), grad_out.dim(3)});
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t c = 0; c < ch; ++c) {
      Real* d = gi.data().data() + (b * ch + c) * plane;
      for (std::size_t k = 0; k < rep; ++k) {
        const Real* s = grad_out.data().data() + ((b * ch + c) * rep + k) * plane;
        for (std::size_t p = 0; p < plane; ++p) d[p] += s[p];
      }
    }
  }
  return gi;
}

template <typename Real>
Param<Real>& ParamStore<Real>::add(const std::string& name, const Shape& shape, ParamKind kind) {
  if (contains(name)) throw ValueError("duplicate parameter name '" + name + "'");
  index_.emplace(name, params_.size());
  params_.push_back(Param<Real>{name, kind, Tensor<Real>(shape), Tensor<Real>(shape)});
  return params_.back();
}

template <typename Real>
Param<Real>& ParamStore<Real>::get(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw ValueError("unknown parameter '" + name + "'");
  return params_[it->second];
}

template <typename Real>
const Param<Real>& ParamStore<Real>::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ValueError("unknown parameter '" + name + "'");
  return params_[it->second];
}

template <typename Real>
std::size_t ParamStore<Real>::scalar_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.value.numel();
  return n;
}

template <typename Real>
void ParamStore<Real>::zero_grad() {
  for (auto& p : params_) p.grad.fill(Real(0));
}

template <typename Real>
void ConvLayer::register_params(ParamStore<Real>& store) const {
  store.add(weight_name(), Shape{c_out, c_in, kernel, kernel}, ParamKind::ConvWeight);
  if (bias) store.add(bias_name(), Shape{c_out}, ParamKind::Bias);
}

template <typename Real>
Tensor<Real> ConvLayer::forward(const ParamStore<Real>& store, const Tensor<Real>& x) const {
  const Tensor<Real>* b = bias ? &store.value(bias_name()) : nullptr;
  return conv2d(x, store.value(weight_name()), b, Conv2dParams{1, kernel / 2, 1});
}

template <typename Real>
Tensor<Real> ConvLayer::backward(ParamStore<Real>& store, const Tensor<Real>& x,
                                 const Tensor<Real>& grad_out) const {
  auto grads = conv2d_backward(x, store.value(weight_name()), grad_out,
                               Conv2dParams{1, kernel / 2, 1}, bias);
  accumulate(store.grad(weight_name()), grads.weight);
  if (bias) accumulate(store.grad(bias_name()), grads.bias);
  return std::move(grads.input);
}

template <typename Real>
InitReport init_params(ParamStore<Real>& store, InitScheme scheme, Rng& rng,
                       std::size_t num_bases) {
  const double e = static_cast<double>(std::max<std::size_t>(1, num_bases));
  for (auto& p : store.entries()) {
    const Shape& s = p.value.shape();
    switch (p.kind) {
      case ParamKind::Bias:
        p.value.fill(Real(0));
        break;
      case ParamKind::ControlBias:
        p.value = rng_fill<Real>(rng, s, Normal{0.0, std::sqrt(1.0 / e)});
        break;
      case ParamKind::ControlWeight: {
        const double fan_in = static_cast<double>(s[1]);
        p.value = rng_fill<Real>(rng, s, Normal{0.0, 0.1 * std::sqrt(1.0 / (e * fan_in))});
        break;
      }
      case ParamKind::ConvWeight:
      case ParamKind::KernelBasis:
      case ParamKind::DynamicBases: {
        // Trailing three axes are always [C_i, k, k].
        const std::size_t r = s.rank();
        const double fan_in = static_cast<double>(s[r - 3] * s[r - 2] * s[r - 1]);
        p.value = rng_fill<Real>(rng, s, Normal{0.0, std::sqrt(2.0 / fan_in)});
        break;
      }
    }
  }
  if (scheme == InitScheme::ResidualEquivalent) return apply_identity_taps(store);
  return {};
}

template <typename Real>
InitReport apply_identity_taps(ParamStore<Real>& store) {
  InitReport report;
  for (auto& p : store.entries()) {
    const Shape& s = p.value.shape();
    if (p.kind == ParamKind::ConvWeight && s[0] == s[1] && s[2] % 2 == 1 && s[3] % 2 == 1) {
      const std::size_t cy = s[2] / 2, cx = s[3] / 2;
      for (std::size_t o = 0; o < s[0]; ++o) p.value.at(o, o, cy, cx) += Real(1);
    } else if (p.kind == ParamKind::ConvWeight || p.kind == ParamKind::KernelBasis ||
               p.kind == ParamKind::DynamicBases) {
      report.notices.push_back("residual_equivalent: no identity tap for '" + p.name + "' " +
                               s.str() + ", left unchanged");
    }
  }
  return report;
}

#define ASCONV_INSTANTIATE_LAYERS(Real)                                                          \
  template Tensor<Real> pixel_unshuffle<Real>(const Tensor<Real>&, std::size_t);                \
  template Tensor<Real> pixel_shuffle<Real>(const Tensor<Real>&, std::size_t);                  \
  template Tensor<Real> repeat_upscale<Real>(const Tensor<Real>&, std::size_t);                 \
  template Tensor<Real> repeat_upscale_backward<Real>(const Tensor<Real>&, std::size_t);        \
  template class ParamStore<Real>;                                                              \
  template void ConvLayer::register_params<Real>(ParamStore<Real>&) const;                      \
  template Tensor<Real> ConvLayer::forward<Real>(const ParamStore<Real>&, const Tensor<Real>&)  \
      const;                                                                                    \
  template Tensor<Real> ConvLayer::backward<Real>(ParamStore<Real>&, const Tensor<Real>&,       \
                                                  const Tensor<Real>&) const;                   \
  template InitReport init_params<Real>(ParamStore<Real>&, InitScheme, Rng&, std::size_t);    \
  template InitReport apply_identity_taps<Real>(ParamStore<Real>&);

ASCONV_INSTANTIATE_LAYERS(float)
ASCONV_INSTANTIATE_LAYERS(double)

#undef ASCONV_INSTANTIATE_LAYERS

}  // namespace asconv
