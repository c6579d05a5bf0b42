#pragma once

#include <cstddef>
#include <string_view>
#include <type_traits>
#include <utility>

#include "asconv/tensor.hpp"

// Numeric kernels with explicit gradient counterparts. All functions are pure:
// inputs are taken by const reference and never modified.
//
// Convolutions follow the deep-learning cross-correlation convention (the
// kernel is not flipped) with zero padding.
//
// Accumulation order is fixed so naive-loop oracles can match bit-for-bit:
//   matmul:  c[m,n] = ((0 + a[m,0]b[0,n]) + a[m,1]b[1,n]) + ...   (k ascending)
//   conv2d:  out = sum over input channel, then kernel row, then kernel
//            column, each ascending, starting from 0; bias added last.
// Parallel execution (see set_num_threads) splits work only across
// independent output elements, so results do not depend on the thread count.

namespace asconv {

/// Worker threads used by the conv kernels. Defaults to 1.
void set_num_threads(std::size_t n);
std::size_t num_threads();

/// Throws NumericError naming `where` if any element is NaN or Inf.
template <typename Real>
void check_finite(const Tensor<Real>& t, std::string_view where);

template <typename Real>
Tensor<Real> matmul(const Tensor<Real>& a, const Tensor<Real>& b);

struct Conv2dParams {
  std::size_t stride = 1;
  std::size_t padding = 0;
  std::size_t groups = 1;
};

/// input [B,C_i,H,W], weight [C_o, C_i/groups, kh, kw], bias [C_o] or null.
template <typename Real>
Tensor<Real> conv2d(const Tensor<Real>& input, const Tensor<Real>& weight,
                    const std::type_identity_t<Tensor<Real>>* bias, const Conv2dParams& params);

template <typename Real>
struct Conv2dGrads {
  Tensor<Real> input;
  Tensor<Real> weight;
  Tensor<Real> bias;  // empty unless requested
};

template <typename Real>
Conv2dGrads<Real> conv2d_backward(const Tensor<Real>& input, const Tensor<Real>& weight,
                                  const Tensor<Real>& grad_out, const Conv2dParams& params,
                                  bool with_bias);

/// [B,C,H,W] -> [B,C,1,1] mean over the spatial extent.
template <typename Real>
Tensor<Real> global_avg_pool(const Tensor<Real>& input);

/// Spreads grad_out[b,c] / (H*W) over the input extent.
template <typename Real>
Tensor<Real> global_avg_pool_backward(const Tensor<Real>& grad_out, const Shape& input_shape);

// Element-wise ops require equal shapes; there is no broadcasting. The
// gradients of add and sub are the upstream gradient itself (negated for the
// second operand of sub), so they have no dedicated backward function.
template <typename Real>
Tensor<Real> add(const Tensor<Real>& a, const Tensor<Real>& b);
template <typename Real>
Tensor<Real> sub(const Tensor<Real>& a, const Tensor<Real>& b);
template <typename Real>
Tensor<Real> mul(const Tensor<Real>& a, const Tensor<Real>& b);
template <typename Real>
Tensor<Real> scale(const Tensor<Real>& a, Real s);
template <typename Real>
Tensor<Real> clamp(const Tensor<Real>& a, Real low, Real high);
template <typename Real>
Tensor<Real> relu(const Tensor<Real>& a);

/// (dL/da, dL/db) for c = a * b.
template <typename Real>
std::pair<Tensor<Real>, Tensor<Real>> mul_backward(const Tensor<Real>& a, const Tensor<Real>& b,
                                                   const Tensor<Real>& grad_out);

/// Subgradient 0 at x == 0.
template <typename Real>
Tensor<Real> relu_backward(const Tensor<Real>& input, const Tensor<Real>& grad_out);

/// Passes the gradient where low < x < high, zero elsewhere.
template <typename Real>
Tensor<Real> clamp_backward(const Tensor<Real>& input, Real low, Real high,
                            const Tensor<Real>& grad_out);

/// In-place accumulation used by the layer backward passes: dst += src.
template <typename Real>
void accumulate(Tensor<Real>& dst, const Tensor<Real>& src);

}  // namespace asconv
