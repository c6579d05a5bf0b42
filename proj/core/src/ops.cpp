#include "asconv/ops.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <string>
#include <thread>
#include <vector>

namespace asconv {
namespace {

std::atomic<std::size_t> g_num_threads{1};

// Output pixels unfolded at once by the forward convolution.
constexpr std::size_t kBandColumns = 8192;

// Runs fn(i) for i in [0, n). Tasks must write disjoint memory.
template <typename Fn>
void parallel_for(std::size_t n, Fn&& fn) {
  const std::size_t workers = std::min(g_num_threads.load(), n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (std::size_t t = 0; t < workers; ++t) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) fn(i);
    });
  }
  for (auto& th : pool) th.join();
}

void require_same_shape(const Shape& a, const Shape& b, const char* op) {
  if (!(a == b)) {
    throw ShapeError(std::string(op) + ": shape mismatch " + a.str() + " vs " + b.str());
  }
}

void require_rank(const Shape& s, std::size_t rank, const char* what) {
  if (s.rank() != rank) {
    throw ShapeError(std::string(what) + " must have rank " + std::to_string(rank) + ", got " +
                     s.str());
  }
}

struct ConvGeometry {
  std::size_t batch, c_in, height, width;
  std::size_t c_out, kh, kw;
  std::size_t groups, c_in_g, c_out_g;
  std::size_t out_h, out_w;
  std::size_t stride, pad;

  std::size_t k_size() const { return c_in_g * kh * kw; }
  std::size_t n_size() const { return out_h * out_w; }
};

template <typename Real>
ConvGeometry conv_geometry(const Tensor<Real>& input, const Tensor<Real>& weight,
                           const Conv2dParams& p) {
  require_rank(input.shape(), 4, "conv2d input");
  require_rank(weight.shape(), 4, "conv2d weight");
  if (p.groups == 0 || p.stride == 0) throw ShapeError("conv2d: groups and stride must be >= 1");
  ConvGeometry g{};
  g.batch = input.dim(0);
  g.c_in = input.dim(1);
  g.height = input.dim(2);
  g.width = input.dim(3);
  g.c_out = weight.dim(0);
  g.kh = weight.dim(2);
  g.kw = weight.dim(3);
  g.groups = p.groups;
  g.stride = p.stride;
  g.pad = p.padding;
  if (g.c_in % g.groups != 0 || g.c_out % g.groups != 0) {
    throw ShapeError("conv2d: channels (" + std::to_string(g.c_in) + " in, " +
                     std::to_string(g.c_out) + " out) not divisible by groups " +
                     std::to_string(g.groups));
  }
  g.c_in_g = g.c_in / g.groups;
  g.c_out_g = g.c_out / g.groups;
  if (weight.dim(1) != g.c_in_g) {
    throw ShapeError("conv2d: weight " + weight.shape().str() + " expects " +
                     std::to_string(weight.dim(1)) + " input channels per group, input has " +
                     std::to_string(g.c_in_g));
  }
  if (g.height + 2 * g.pad < g.kh || g.width + 2 * g.pad < g.kw) {
    throw ShapeError("conv2d: kernel larger than padded input, output extent would be <= 0");
  }
  g.out_h = (g.height + 2 * g.pad - g.kh) / g.stride + 1;
  g.out_w = (g.width + 2 * g.pad - g.kw) / g.stride + 1;
  return g;
}

// Unfolds output rows [oy0, oy1) of one (sample, group) slice into a [K, N]
// matrix, K ordered as (channel, kernel row, kernel column) and N covering
// the band's output pixels.
template <typename Real>
void im2col(const Real* src, const ConvGeometry& g, std::size_t oy0, std::size_t oy1, Real* col) {
  const std::size_t n = (oy1 - oy0) * g.out_w;
  for (std::size_t c = 0; c < g.c_in_g; ++c) {
    const Real* plane = src + c * g.height * g.width;
    for (std::size_t ky = 0; ky < g.kh; ++ky) {
      for (std::size_t kx = 0; kx < g.kw; ++kx) {
        Real* row = col + ((c * g.kh + ky) * g.kw + kx) * n;
        for (std::size_t oy = oy0; oy < oy1; ++oy) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) -
                                    static_cast<std::ptrdiff_t>(g.pad);
          Real* dst = row + (oy - oy0) * g.out_w;
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.height)) {
            std::fill(dst, dst + g.out_w, Real(0));
            continue;
          }
          const Real* line = plane + static_cast<std::size_t>(iy) * g.width;
          for (std::size_t ox = 0; ox < g.out_w; ++ox) {
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) -
                                      static_cast<std::ptrdiff_t>(g.pad);
            dst[ox] = (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.width))
                          ? Real(0)
                          : line[static_cast<std::size_t>(ix)];
          }
        }
      }
    }
  }
}

// Adjoint of im2col: scatters a [K, N] matrix back onto the input slice.
template <typename Real>
void col2im(const Real* col, const ConvGeometry& g, Real* dst) {
  const std::size_t n = g.n_size();
  for (std::size_t c = 0; c < g.c_in_g; ++c) {
    Real* plane = dst + c * g.height * g.width;
    for (std::size_t ky = 0; ky < g.kh; ++ky) {
      for (std::size_t kx = 0; kx < g.kw; ++kx) {
        const Real* row = col + ((c * g.kh + ky) * g.kw + kx) * n;
        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) -
                                    static_cast<std::ptrdiff_t>(g.pad);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.height)) continue;
          Real* line = plane + static_cast<std::size_t>(iy) * g.width;
          const Real* src = row + oy * g.out_w;
          for (std::size_t ox = 0; ox < g.out_w; ++ox) {
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) -
                                      static_cast<std::ptrdiff_t>(g.pad);
            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.width)) continue;
            line[static_cast<std::size_t>(ix)] += src[ox];
          }
        }
      }
    }
  }
}

// out[m, :] = sum_k a[m, k] * b[k, :], k ascending from zero. Four output
// rows share each pass over b; every element keeps its own sequential sum.
// Output rows are `ldo` elements apart (n when packed).
template <typename Real>
void gemm_rows(const Real* a, const Real* b, Real* out, std::size_t m, std::size_t k_dim,
               std::size_t n, std::size_t ldo) {
  for (std::size_t r = 0; r < m; ++r) std::fill(out + r * ldo, out + r * ldo + n, Real(0));
  std::size_t row = 0;
  for (; row + 4 <= m; row += 4) {
    Real* o0 = out + row * ldo;
    Real* o1 = o0 + ldo;
    Real* o2 = o1 + ldo;
    Real* o3 = o2 + ldo;
    const Real* a0 = a + row * k_dim;
    const Real* a1 = a0 + k_dim;
    const Real* a2 = a1 + k_dim;
    const Real* a3 = a2 + k_dim;
    for (std::size_t k = 0; k < k_dim; ++k) {
      const Real w0 = a0[k], w1 = a1[k], w2 = a2[k], w3 = a3[k];
      const Real* __restrict bk = b + k * n;
      for (std::size_t j = 0; j < n; ++j) {
        const Real v = bk[j];
        o0[j] += w0 * v;
        o1[j] += w1 * v;
        o2[j] += w2 * v;
        o3[j] += w3 * v;
      }
    }
  }
  for (; row < m; ++row) {
    Real* __restrict o = out + row * ldo;
    const Real* ar = a + row * k_dim;
    for (std::size_t k = 0; k < k_dim; ++k) {
      const Real w = ar[k];
      const Real* __restrict bk = b + k * n;
      for (std::size_t j = 0; j < n; ++j) o[j] += w * bk[j];
    }
  }
}

// Dot product with eight interleaved partial sums (fixed order, vectorizable).
template <typename Real>
Real dot(const Real* __restrict x, const Real* __restrict y, std::size_t n) {
  Real acc[8] = {};
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    for (std::size_t l = 0; l < 8; ++l) acc[l] += x[i + l] * y[i + l];
  }
  Real tail = 0;
  for (; i < n; ++i) tail += x[i] * y[i];
  return ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7])) + tail;
}

}  // namespace

void set_num_threads(std::size_t n) { g_num_threads = std::max<std::size_t>(1, n); }
std::size_t num_threads() { return g_num_threads.load(); }

template <typename Real>
void check_finite(const Tensor<Real>& t, std::string_view where) {
  for (Real v : t.data()) {
    if (!std::isfinite(v)) throw NumericError(std::string(where) + ": non-finite value produced");
  }
}

template <typename Real>
Tensor<Real> matmul(const Tensor<Real>& a, const Tensor<Real>& b) {
  require_rank(a.shape(), 2, "matmul lhs");
  require_rank(b.shape(), 2, "matmul rhs");
  if (a.dim(1) != b.dim(0)) {
    throw ShapeError("matmul: inner extents differ " + a.shape().str() + " x " + b.shape().str());
  }
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor<Real> c(Shape{m, n});
  gemm_rows(a.data().data(), b.data().data(), c.data().data(), m, k, n, n);
  check_finite(c, "matmul");
  return c;
}

template <typename Real>
Tensor<Real> conv2d(const Tensor<Real>& input, const Tensor<Real>& weight,
                    const std::type_identity_t<Tensor<Real>>* bias, const Conv2dParams& params) {
  const ConvGeometry g = conv_geometry(input, weight, params);
  if (bias && !(bias->shape() == Shape{g.c_out})) {
    throw ShapeError("conv2d: bias shape " + bias->shape().str() + " != [" +
                     std::to_string(g.c_out) + "]");
  }
  Tensor<Real> out(Shape{g.batch, g.c_out, g.out_h, g.out_w});
  const std::size_t k_size = g.k_size();
  const std::size_t n_size = g.n_size();
  const Real* in = input.data().data();
  const Real* w = weight.data().data();
  Real* o = out.data().data();

  // Large images are processed in bands of output rows to bound the
  // unfolded buffer.
  const std::size_t band = std::clamp<std::size_t>(kBandColumns / g.out_w, 1, g.out_h);
  parallel_for(g.batch * g.groups, [&](std::size_t task) {
    const std::size_t b = task / g.groups;
    const std::size_t q = task % g.groups;
    std::vector<Real> col(k_size * band * g.out_w);
    const Real* src = in + (b * g.c_in + q * g.c_in_g) * g.height * g.width;
    Real* dst = o + (b * g.c_out + q * g.c_out_g) * n_size;
    for (std::size_t oy0 = 0; oy0 < g.out_h; oy0 += band) {
      const std::size_t oy1 = std::min(g.out_h, oy0 + band);
      im2col(src, g, oy0, oy1, col.data());
      gemm_rows(w + q * g.c_out_g * k_size, col.data(), dst + oy0 * g.out_w, g.c_out_g, k_size,
                (oy1 - oy0) * g.out_w, n_size);
    }
    if (bias) {
      for (std::size_t co = 0; co < g.c_out_g; ++co) {
        const Real bv = (*bias)[q * g.c_out_g + co];
        Real* row = dst + co * n_size;
        for (std::size_t j = 0; j < n_size; ++j) row[j] += bv;
      }
    }
  });
  check_finite(out, "conv2d");
  return out;
}

template <typename Real>
Conv2dGrads<Real> conv2d_backward(const Tensor<Real>& input, const Tensor<Real>& weight,
                                  const Tensor<Real>& grad_out, const Conv2dParams& params,
                                  bool with_bias) {
  const ConvGeometry g = conv_geometry(input, weight, params);
  const Shape expected{g.batch, g.c_out, g.out_h, g.out_w};
  if (!(grad_out.shape() == expected)) {
    throw ShapeError("conv2d_backward: grad_out " + grad_out.shape().str() + " != " +
                     expected.str());
  }
  const std::size_t k_size = g.k_size();
  const std::size_t n_size = g.n_size();
  const std::size_t w_group = g.c_out_g * k_size;

  Conv2dGrads<Real> grads;
  grads.input = Tensor<Real>(input.shape());
  grads.weight = Tensor<Real>(weight.shape());
  // Per-task weight partials, reduced over the batch in ascending order below.
  std::vector<Real> partial(g.batch * g.groups * w_group);

  const Real* in = input.data().data();
  const Real* w = weight.data().data();
  const Real* go = grad_out.data().data();
  Real* gi = grads.input.data().data();

  parallel_for(g.batch * g.groups, [&](std::size_t task) {
    const std::size_t b = task / g.groups;
    const std::size_t q = task % g.groups;
    std::vector<Real> col(k_size * n_size);
    const std::size_t in_offset = (b * g.c_in + q * g.c_in_g) * g.height * g.width;
    im2col(in + in_offset, g, 0, g.out_h, col.data());
    const Real* gout = go + (b * g.c_out + q * g.c_out_g) * n_size;
    const Real* wq = w + q * w_group;

    Real* pw = partial.data() + task * w_group;
    for (std::size_t co = 0; co < g.c_out_g; ++co) {
      for (std::size_t k = 0; k < k_size; ++k) {
        pw[co * k_size + k] = dot(gout + co * n_size, col.data() + k * n_size, n_size);
      }
    }

    // grad_col[k, :] = sum_co w[co, k] * gout[co, :]
    std::fill(col.begin(), col.end(), Real(0));
    for (std::size_t k = 0; k < k_size; ++k) {
      Real* __restrict gc = col.data() + k * n_size;
      for (std::size_t co = 0; co < g.c_out_g; ++co) {
        const Real wv = wq[co * k_size + k];
        if (wv == Real(0)) continue;
        const Real* __restrict gr = gout + co * n_size;
        for (std::size_t j = 0; j < n_size; ++j) gc[j] += wv * gr[j];
      }
    }
    col2im(col.data(), g, gi + in_offset);
  });

  Real* gw = grads.weight.data().data();
  for (std::size_t q = 0; q < g.groups; ++q) {
    Real* dst = gw + q * w_group;
    for (std::size_t b = 0; b < g.batch; ++b) {
      const Real* src = partial.data() + (b * g.groups + q) * w_group;
      for (std::size_t i = 0; i < w_group; ++i) dst[i] += src[i];
    }
  }

  if (with_bias) {
    grads.bias = Tensor<Real>(Shape{g.c_out});
    for (std::size_t b = 0; b < g.batch; ++b) {
      for (std::size_t co = 0; co < g.c_out; ++co) {
        const Real* row = go + (b * g.c_out + co) * n_size;
        Real s = 0;
        for (std::size_t j = 0; j < n_size; ++j) s += row[j];
        grads.bias[co] += s;
      }
    }
  }
  check_finite(grads.input, "conv2d_backward");
  check_finite(grads.weight, "conv2d_backward");
  return grads;
}

template <typename Real>
Tensor<Real> global_avg_pool(const Tensor<Real>& input) {
  require_rank(input.shape(), 4, "global_avg_pool input");
  const std::size_t bc = input.dim(0) * input.dim(1);
  const std::size_t hw = input.dim(2) * input.dim(3);
  Tensor<Real> out(Shape{input.dim(0), input.dim(1), 1, 1});
  for (std::size_t i = 0; i < bc; ++i) {
    Real s = 0;
    const Real* p = input.data().data() + i * hw;
    for (std::size_t j = 0; j < hw; ++j) s += p[j];
    out[i] = s / static_cast<Real>(hw);
  }
  return out;
}

template <typename Real>
Tensor<Real> global_avg_pool_backward(const Tensor<Real>& grad_out, const Shape& input_shape) {
  require_rank(input_shape, 4, "global_avg_pool input");
  const Shape pooled{input_shape[0], input_shape[1], 1, 1};
  require_same_shape(grad_out.shape(), pooled, "global_avg_pool_backward");
  const std::size_t hw = input_shape[2] * input_shape[3];
  Tensor<Real> gi(input_shape);
  for (std::size_t i = 0; i < grad_out.numel(); ++i) {
    const Real v = grad_out[i] / static_cast<Real>(hw);
    std::fill_n(gi.data().data() + i * hw, hw, v);
  }
  return gi;
}

namespace {

template <typename Real, typename Fn>
Tensor<Real> binary(const Tensor<Real>& a, const Tensor<Real>& b, const char* op, Fn fn) {
  require_same_shape(a.shape(), b.shape(), op);
  Tensor<Real> out(a.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = fn(a[i], b[i]);
  check_finite(out, op);
  return out;
}

template <typename Real, typename Fn>
Tensor<Real> unary(const Tensor<Real>& a, const char* op, Fn fn) {
  Tensor<Real> out(a.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = fn(a[i]);
  check_finite(out, op);
  return out;
}

}  // namespace

template <typename Real>
Tensor<Real> add(const Tensor<Real>& a, const Tensor<Real>& b) {
  return binary(a, b, "add", [](Real x, Real y) { return x + y; });
}

template <typename Real>
Tensor<Real> sub(const Tensor<Real>& a, const Tensor<Real>& b) {
  return binary(a, b, "sub", [](Real x, Real y) { return x - y; });
}

template <typename Real>
Tensor<Real> mul(const Tensor<Real>& a, const Tensor<Real>& b) {
  return binary(a, b, "mul", [](Real x, Real y) { return x * y; });
}

template <typename Real>
Tensor<Real> scale(const Tensor<Real>& a, Real s) {
  return unary(a, "scale", [s](Real x) { return x * s; });
}

template <typename Real>
Tensor<Real> clamp(const Tensor<Real>& a, Real low, Real high) {
  if (!(low <= high)) throw ValueError("clamp: low must not exceed high");
  return unary(a, "clamp", [=](Real x) { return std::clamp(x, low, high); });
}

template <typename Real>
Tensor<Real> relu(const Tensor<Real>& a) {
  return unary(a, "relu", [](Real x) { return x > Real(0) ? x : Real(0); });
}

template <typename Real>
std::pair<Tensor<Real>, Tensor<Real>> mul_backward(const Tensor<Real>& a, const Tensor<Real>& b,
                                                   const Tensor<Real>& grad_out) {
  require_same_shape(a.shape(), grad_out.shape(), "mul_backward");
  return {mul(grad_out, b), mul(grad_out, a)};
}

template <typename Real>
Tensor<Real> relu_backward(const Tensor<Real>& input, const Tensor<Real>& grad_out) {
  return binary(input, grad_out, "relu_backward",
                [](Real x, Real g) { return x > Real(0) ? g : Real(0); });
}

template <typename Real>
Tensor<Real> clamp_backward(const Tensor<Real>& input, Real low, Real high,
                            const Tensor<Real>& grad_out) {
  return binary(input, grad_out, "clamp_backward",
                [=](Real x, Real g) { return (x > low && x < high) ? g : Real(0); });
}

template <typename Real>
void accumulate(Tensor<Real>& dst, const Tensor<Real>& src) {
  require_same_shape(dst.shape(), src.shape(), "accumulate");
  Real* d = dst.data().data();
  const Real* s = src.data().data();
  for (std::size_t i = 0; i < dst.numel(); ++i) d[i] += s[i];
}

#define ASCONV_INSTANTIATE_OPS(Real)                                                              \
  template void check_finite<Real>(const Tensor<Real>&, std::string_view);                       \
  template Tensor<Real> matmul<Real>(const Tensor<Real>&, const Tensor<Real>&);                  \
  template Tensor<Real> conv2d<Real>(const Tensor<Real>&, const Tensor<Real>&,                   \
                                     const Tensor<Real>*, const Conv2dParams&);                  \
  template Conv2dGrads<Real> conv2d_backward<Real>(const Tensor<Real>&, const Tensor<Real>&,     \
                                                   const Tensor<Real>&, const Conv2dParams&,     \
                                                   bool);                                        \
  template Tensor<Real> global_avg_pool<Real>(const Tensor<Real>&);                              \
  template Tensor<Real> global_avg_pool_backward<Real>(const Tensor<Real>&, const Shape&);       \
  template Tensor<Real> add<Real>(const Tensor<Real>&, const Tensor<Real>&);                     \
  template Tensor<Real> sub<Real>(const Tensor<Real>&, const Tensor<Real>&);                     \
  template Tensor<Real> mul<Real>(const Tensor<Real>&, const Tensor<Real>&);                     \
  template Tensor<Real> scale<Real>(const Tensor<Real>&, Real);                                  \
  template Tensor<Real> clamp<Real>(const Tensor<Real>&, Real, Real);                            \
  template Tensor<Real> relu<Real>(const Tensor<Real>&);                                         \
  template std::pair<Tensor<Real>, Tensor<Real>> mul_backward<Real>(                             \
      const Tensor<Real>&, const Tensor<Real>&, const Tensor<Real>&);                            \
  template Tensor<Real> relu_backward<Real>(const Tensor<Real>&, const Tensor<Real>&);           \
  template Tensor<Real> clamp_backward<Real>(const Tensor<Real>&, Real, Real,                    \
                                             const Tensor<Real>&);                               \
  template void accumulate<Real>(Tensor<Real>&, const Tensor<Real>&);

ASCONV_INSTANTIATE_OPS(float)
ASCONV_INSTANTIATE_OPS(double)

#undef ASCONV_INSTANTIATE_OPS

}  // namespace asconv
