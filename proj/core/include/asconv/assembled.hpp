#pragma once

#include <cstddef>

#include "asconv/ops.hpp"
#include "asconv/tensor.hpp"

// Assembled convolution: a control module maps the pooled input feature to
// per-sample, per-output-channel mixing coefficients; each output channel's
// kernel is the coefficient-weighted sum of E shared candidate kernels; the
// per-sample kernels are applied in one grouped convolution.
//
// Shapes used throughout:
//   f_in          [B, C_i, H, W]
//   coefficients  [B, C_o, E]
//   basis         [E, C_i, ks, ks]          (assembled candidates)
//   bases         [E, C_o, C_i, ks, ks]     (dynamic-convolution candidates)
//   kernels       [B, C_o, C_i, ks, ks]

namespace asconv {

enum class CoeffNorm { None, Softmax };

/// Global average pool -> 1x1 conv (weight [rows*E, C_i, 1, 1], optional bias
/// [rows*E]) -> reshape to [B, rows, E] -> optional softmax over E.
/// rows is C_o for assembled convolution and 1 for dynamic convolution.
template <typename Real>
Tensor<Real> control_forward(const Tensor<Real>& f_in, const Tensor<Real>& weight,
                             const std::type_identity_t<Tensor<Real>>* bias, std::size_t rows,
                             std::size_t num_bases, CoeffNorm norm);

template <typename Real>
struct ControlGrads {
  Tensor<Real> input;
  Tensor<Real> weight;
  Tensor<Real> bias;  // empty without bias
};

/// `coefficients` is the control_forward output (post-softmax when enabled).
template <typename Real>
ControlGrads<Real> control_backward(const Tensor<Real>& f_in, const Tensor<Real>& weight,
                                    const Tensor<Real>& coefficients,
                                    const Tensor<Real>& grad_coefficients, CoeffNorm norm,
                                    bool with_bias);

/// K = coeff (x) basis as one matmul: [(B*C_o), E] x [E, (C_i*ks*ks)].
template <typename Real>
Tensor<Real> assemble_kernels(const Tensor<Real>& coefficients, const Tensor<Real>& basis);

template <typename Real>
struct AssembleGrads {
  Tensor<Real> coefficients;
  Tensor<Real> basis;
};

template <typename Real>
AssembleGrads<Real> assemble_kernels_backward(const Tensor<Real>& coefficients,
                                              const Tensor<Real>& basis,
                                              const Tensor<Real>& grad_kernels);

/// Per-sample convolution with padding ks/2, done as a single conv2d with
/// groups = B over the input reshaped to [1, B*C_i, H, W]. `bias` ([C_o]) is
/// static, shared by all samples.
template <typename Real>
Tensor<Real> assembled_conv_forward(const Tensor<Real>& f_in, const Tensor<Real>& kernels,
                                    const std::type_identity_t<Tensor<Real>>* bias = nullptr);

template <typename Real>
struct AssembledConvGrads {
  Tensor<Real> input;
  Tensor<Real> kernels;
  Tensor<Real> bias;
};

template <typename Real>
AssembledConvGrads<Real> assembled_conv_backward(const Tensor<Real>& f_in,
                                                 const Tensor<Real>& kernels,
                                                 const Tensor<Real>& grad_out, bool with_bias);

/// Dynamic-convolution kernels: K[b] = sum_i coeff[b, i] * bases[i], one
/// coefficient vector per sample shared by all output channels.
/// coefficients may be [B, E] or [B, 1, E].
template <typename Real>
Tensor<Real> dynamic_assemble(const Tensor<Real>& coefficients, const Tensor<Real>& bases);

template <typename Real>
struct DynamicAssembleGrads {
  Tensor<Real> coefficients;  // same shape as the forward coefficients
  Tensor<Real> bases;
};

template <typename Real>
DynamicAssembleGrads<Real> dynamic_assemble_backward(const Tensor<Real>& coefficients,
                                                     const Tensor<Real>& bases,
                                                     const Tensor<Real>& grad_kernels);

/// Parameters of one stand-alone assembled convolution with its own control
/// module. Empty control_bias / bias tensors mean "disabled".
template <typename Real>
struct AssembledConvParams {
  Tensor<Real> control_weight;  // [C_o*E, C_i, 1, 1]
  Tensor<Real> control_bias;    // [C_o*E]
  Tensor<Real> basis;           // [E, C_i, ks, ks]
  Tensor<Real> bias;            // [C_o]

  std::size_t num_bases() const { return basis.dim(0); }
  std::size_t out_channels() const { return control_weight.dim(0) / basis.dim(0); }
};

template <typename Real>
struct AssembledForward {
  Tensor<Real> coefficients;
  Tensor<Real> kernels;
  Tensor<Real> output;
};

template <typename Real>
AssembledForward<Real> assembled_forward(const Tensor<Real>& f_in,
                                         const AssembledConvParams<Real>& params,
                                         CoeffNorm norm = CoeffNorm::None);

template <typename Real>
struct AssembledGrads {
  Tensor<Real> input;
  Tensor<Real> control_weight;
  Tensor<Real> control_bias;
  Tensor<Real> basis;
  Tensor<Real> bias;
};

/// Chain rule through the grouped conv, the kernel matmul and the control
/// module. The input gradient sums the conv path and the pooling path.
template <typename Real>
AssembledGrads<Real> assembled_backward(const Tensor<Real>& f_in,
                                        const AssembledConvParams<Real>& params,
                                        const AssembledForward<Real>& forward,
                                        const Tensor<Real>& grad_out,
                                        CoeffNorm norm = CoeffNorm::None);

}  // namespace asconv
