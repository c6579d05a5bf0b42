#include "asconv/assembled.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace asconv {
namespace {

template <typename Real>
Tensor<Real> transpose2d(const Tensor<Real>& m) {
  return m.permute({1, 0});
}

template <typename Real>
Tensor<Real> tile_bias(const Tensor<Real>& bias, std::size_t times) {
  Tensor<Real> out(Shape{bias.numel() * times});
  for (std::size_t t = 0; t < times; ++t) {
    std::copy(bias.data().begin(), bias.data().end(), out.data().begin() + t * bias.numel());
  }
  return out;
}

void require(bool ok, const std::string& msg) {
  if (!ok) throw ShapeError(msg);
}

}  // namespace

template <typename Real>
Tensor<Real> control_forward(const Tensor<Real>& f_in, const Tensor<Real>& weight,
                             const std::type_identity_t<Tensor<Real>>* bias, std::size_t rows,
                             std::size_t num_bases, CoeffNorm norm) {
  require(f_in.rank() == 4, "control_forward: input must be [B,C,H,W]");
  require(weight.rank() == 4 && weight.dim(0) == rows * num_bases && weight.dim(1) == f_in.dim(1) &&
              weight.dim(2) == 1 && weight.dim(3) == 1,
          "control_forward: weight " + weight.shape().str() + " does not map " +
              std::to_string(f_in.dim(1)) + " channels to " + std::to_string(rows) + "x" +
              std::to_string(num_bases) + " coefficients");
  const std::size_t batch = f_in.dim(0);
  Tensor<Real> pooled = global_avg_pool(f_in);
  Tensor<Real> logits = conv2d(pooled, weight, bias, Conv2dParams{});
  Tensor<Real> coeff = logits.reshape(Shape{batch, rows, num_bases});
  if (norm == CoeffNorm::Softmax) {
    for (std::size_t r = 0; r < batch * rows; ++r) {
      Real* row = coeff.data().data() + r * num_bases;
      const Real peak = *std::max_element(row, row + num_bases);
      Real total = 0;
      for (std::size_t e = 0; e < num_bases; ++e) {
        row[e] = std::exp(row[e] - peak);
        total += row[e];
      }
      for (std::size_t e = 0; e < num_bases; ++e) row[e] /= total;
    }
  }
  return coeff;
}

template <typename Real>
ControlGrads<Real> control_backward(const Tensor<Real>& f_in, const Tensor<Real>& weight,
                                    const Tensor<Real>& coefficients,
                                    const Tensor<Real>& grad_coefficients, CoeffNorm norm,
                                    bool with_bias) {
  require(coefficients.shape() == grad_coefficients.shape() && coefficients.rank() == 3,
          "control_backward: coefficient gradient shape mismatch");
  const std::size_t batch = coefficients.dim(0);
  const std::size_t rows = coefficients.dim(1);
  const std::size_t num_bases = coefficients.dim(2);

  Tensor<Real> grad_logits = grad_coefficients;
  if (norm == CoeffNorm::Softmax) {
    for (std::size_t r = 0; r < batch * rows; ++r) {
      const Real* p = coefficients.data().data() + r * num_bases;
      Real* g = grad_logits.data().data() + r * num_bases;
      Real inner = 0;
      for (std::size_t e = 0; e < num_bases; ++e) inner += p[e] * g[e];
      for (std::size_t e = 0; e < num_bases; ++e) g[e] = p[e] * (g[e] - inner);
    }
  }
  Tensor<Real> pooled = global_avg_pool(f_in);
  auto conv = conv2d_backward(pooled, weight,
                              grad_logits.reshape(Shape{batch, rows * num_bases, 1, 1}),
                              Conv2dParams{}, with_bias);
  ControlGrads<Real> out;
  out.input = global_avg_pool_backward(conv.input, f_in.shape());
  out.weight = std::move(conv.weight);
  out.bias = std::move(conv.bias);
  return out;
}

template <typename Real>
Tensor<Real> assemble_kernels(const Tensor<Real>& coefficients, const Tensor<Real>& basis) {
  require(coefficients.rank() == 3, "assemble_kernels: coefficients must be [B,C_o,E]");
  require(basis.rank() == 4 && basis.dim(2) == basis.dim(3),
          "assemble_kernels: basis must be [E,C_i,ks,ks]");
  require(coefficients.dim(2) == basis.dim(0),
          "assemble_kernels: coefficient E=" + std::to_string(coefficients.dim(2)) +
              " but basis E=" + std::to_string(basis.dim(0)));
  const std::size_t batch = coefficients.dim(0), c_out = coefficients.dim(1);
  const std::size_t e = basis.dim(0), c_in = basis.dim(1), ks = basis.dim(2);
  Tensor<Real> k = matmul(coefficients.reshape(Shape{batch * c_out, e}),
                          basis.reshape(Shape{e, c_in * ks * ks}));
  return k.reshape(Shape{batch, c_out, c_in, ks, ks});
}

template <typename Real>
AssembleGrads<Real> assemble_kernels_backward(const Tensor<Real>& coefficients,
                                              const Tensor<Real>& basis,
                                              const Tensor<Real>& grad_kernels) {
  const std::size_t batch = coefficients.dim(0), c_out = coefficients.dim(1);
  const std::size_t e = basis.dim(0), c_in = basis.dim(1), ks = basis.dim(2);
  require(grad_kernels.shape() == Shape({batch, c_out, c_in, ks, ks}),
          "assemble_kernels_backward: grad shape " + grad_kernels.shape().str());
  const auto coeff2 = coefficients.reshape(Shape{batch * c_out, e});
  const auto basis2 = basis.reshape(Shape{e, c_in * ks * ks});
  const auto grad2 = grad_kernels.reshape(Shape{batch * c_out, c_in * ks * ks});
  AssembleGrads<Real> g;
  g.coefficients = matmul(grad2, transpose2d(basis2)).reshape(coefficients.shape());
  g.basis = matmul(transpose2d(coeff2), grad2).reshape(basis.shape());
  return g;
}

template <typename Real>
Tensor<Real> assembled_conv_forward(const Tensor<Real>& f_in, const Tensor<Real>& kernels,
                                    const std::type_identity_t<Tensor<Real>>* bias) {
  require(f_in.rank() == 4, "assembled_conv_forward: input must be [B,C_i,H,W]");
  require(kernels.rank() == 5, "assembled_conv_forward: kernels must be [B,C_o,C_i,ks,ks]");
  const std::size_t batch = f_in.dim(0), c_in = f_in.dim(1), h = f_in.dim(2), w = f_in.dim(3);
  require(kernels.dim(0) == batch,
          "assembled_conv_forward: kernel batch " + std::to_string(kernels.dim(0)) +
              " != input batch " + std::to_string(batch));
  require(kernels.dim(2) == c_in, "assembled_conv_forward: kernel C_i != input channels");
  const std::size_t c_out = kernels.dim(1), ks = kernels.dim(3);
  Tensor<Real> tiled;
  if (bias) {
    require(bias->shape() == Shape{c_out}, "assembled_conv_forward: bias must be [C_o]");
    tiled = tile_bias(*bias, batch);
  }
  Tensor<Real> out = conv2d(f_in.reshape(Shape{1, batch * c_in, h, w}),
                            kernels.reshape(Shape{batch * c_out, c_in, ks, kernels.dim(4)}),
                            bias ? &tiled : nullptr, Conv2dParams{1, ks / 2, batch});
  return out.reshape(Shape{batch, c_out, out.dim(2), out.dim(3)});
}

template <typename Real>
AssembledConvGrads<Real> assembled_conv_backward(const Tensor<Real>& f_in,
                                                 const Tensor<Real>& kernels,
                                                 const Tensor<Real>& grad_out, bool with_bias) {
  const std::size_t batch = f_in.dim(0), c_in = f_in.dim(1), h = f_in.dim(2), w = f_in.dim(3);
  require(kernels.rank() == 5 && kernels.dim(0) == batch && kernels.dim(2) == c_in,
          "assembled_conv_backward: kernel shape " + kernels.shape().str());
  const std::size_t c_out = kernels.dim(1), ks = kernels.dim(3);
  require(grad_out.rank() == 4 && grad_out.dim(0) == batch && grad_out.dim(1) == c_out,
          "assembled_conv_backward: grad shape " + grad_out.shape().str());
  auto g = conv2d_backward(f_in.reshape(Shape{1, batch * c_in, h, w}),
                           kernels.reshape(Shape{batch * c_out, c_in, ks, kernels.dim(4)}),
                           grad_out.reshape(Shape{1, batch * c_out, grad_out.dim(2),
                                                  grad_out.dim(3)}),
                           Conv2dParams{1, ks / 2, batch}, with_bias);
  AssembledConvGrads<Real> out;
  out.input = g.input.reshape(f_in.shape());
  out.kernels = g.weight.reshape(kernels.shape());
  if (with_bias) {
    out.bias = Tensor<Real>(Shape{c_out});
    for (std::size_t b = 0; b < batch; ++b) {
      for (std::size_t o = 0; o < c_out; ++o) out.bias[o] += g.bias[b * c_out + o];
    }
  }
  return out;
}

template <typename Real>
Tensor<Real> dynamic_assemble(const Tensor<Real>& coefficients, const Tensor<Real>& bases) {
  require(bases.rank() == 5, "dynamic_assemble: bases must be [E,C_o,C_i,ks,ks]");
  const bool flat = coefficients.rank() == 2;
  require(flat || (coefficients.rank() == 3 && coefficients.dim(1) == 1),
          "dynamic_assemble: coefficients must be [B,E] or [B,1,E]");
  const std::size_t batch = coefficients.dim(0);
  const std::size_t e = coefficients.dim(coefficients.rank() - 1);
  require(e == bases.dim(0), "dynamic_assemble: coefficient E=" + std::to_string(e) +
                                 " but bases E=" + std::to_string(bases.dim(0)));
  const std::size_t per = bases.numel() / e;
  Tensor<Real> k =
      matmul(coefficients.reshape(Shape{batch, e}), bases.reshape(Shape{e, per}));
  return k.reshape(Shape{batch, bases.dim(1), bases.dim(2), bases.dim(3), bases.dim(4)});
}

template <typename Real>
DynamicAssembleGrads<Real> dynamic_assemble_backward(const Tensor<Real>& coefficients,
                                                     const Tensor<Real>& bases,
                                                     const Tensor<Real>& grad_kernels) {
  const std::size_t batch = coefficients.dim(0);
  const std::size_t e = bases.dim(0);
  const std::size_t per = bases.numel() / e;
  require(grad_kernels.numel() == batch * per,
          "dynamic_assemble_backward: grad shape " + grad_kernels.shape().str());
  const auto coeff2 = coefficients.reshape(Shape{batch, e});
  const auto grad2 = grad_kernels.reshape(Shape{batch, per});
  DynamicAssembleGrads<Real> g;
  g.coefficients = matmul(grad2, transpose2d(bases.reshape(Shape{e, per})))
                       .reshape(coefficients.shape());
  g.bases = matmul(transpose2d(coeff2), grad2).reshape(bases.shape());
  return g;
}

template <typename Real>
AssembledForward<Real> assembled_forward(const Tensor<Real>& f_in,
                                         const AssembledConvParams<Real>& params,
                                         CoeffNorm norm) {
  AssembledForward<Real> fwd;
  fwd.coefficients =
      control_forward(f_in, params.control_weight,
                      params.control_bias.empty() ? nullptr : &params.control_bias,
                      params.out_channels(), params.num_bases(), norm);
  fwd.kernels = assemble_kernels(fwd.coefficients, params.basis);
  fwd.output = assembled_conv_forward(f_in, fwd.kernels, params.bias.empty() ? nullptr : &params.bias);
  return fwd;
}

template <typename Real>
AssembledGrads<Real> assembled_backward(const Tensor<Real>& f_in,
                                        const AssembledConvParams<Real>& params,
                                        const AssembledForward<Real>& forward,
                                        const Tensor<Real>& grad_out, CoeffNorm norm) {
  auto conv = assembled_conv_backward(f_in, forward.kernels, grad_out, !params.bias.empty());
  auto assembly = assemble_kernels_backward(forward.coefficients, params.basis, conv.kernels);
  auto control = control_backward(f_in, params.control_weight, forward.coefficients,
                                  assembly.coefficients, norm, !params.control_bias.empty());
  AssembledGrads<Real> g;
  g.input = add(conv.input, control.input);
  g.control_weight = std::move(control.weight);
  g.control_bias = std::move(control.bias);
  g.basis = std::move(assembly.basis);
  g.bias = std::move(conv.bias);
  return g;
}

#define ASCONV_INSTANTIATE_ASSEMBLED(Real)                                                       \
  template Tensor<Real> control_forward<Real>(const Tensor<Real>&, const Tensor<Real>&,         \
                                              const Tensor<Real>*, std::size_t, std::size_t,    \
                                              CoeffNorm);                                       \
  template ControlGrads<Real> control_backward<Real>(const Tensor<Real>&, const Tensor<Real>&,  \
                                                     const Tensor<Real>&, const Tensor<Real>&,  \
                                                     CoeffNorm, bool);                          \
  template Tensor<Real> assemble_kernels<Real>(const Tensor<Real>&, const Tensor<Real>&);       \
  template AssembleGrads<Real> assemble_kernels_backward<Real>(                                 \
      const Tensor<Real>&, const Tensor<Real>&, const Tensor<Real>&);                           \
  template Tensor<Real> assembled_conv_forward<Real>(const Tensor<Real>&, const Tensor<Real>&,  \
                                                     const Tensor<Real>*);                      \
  template AssembledConvGrads<Real> assembled_conv_backward<Real>(                              \
      const Tensor<Real>&, const Tensor<Real>&, const Tensor<Real>&, bool);                     \
  template Tensor<Real> dynamic_assemble<Real>(const Tensor<Real>&, const Tensor<Real>&);       \
  template DynamicAssembleGrads<Real> dynamic_assemble_backward<Real>(                          \
      const Tensor<Real>&, const Tensor<Real>&, const Tensor<Real>&);                           \
  template AssembledForward<Real> assembled_forward<Real>(                                      \
      const Tensor<Real>&, const AssembledConvParams<Real>&, CoeffNorm);                        \
  template AssembledGrads<Real> assembled_backward<Real>(                                       \
      const Tensor<Real>&, const AssembledConvParams<Real>&, const AssembledForward<Real>&,      \
      const Tensor<Real>&, CoeffNorm);

ASCONV_INSTANTIATE_ASSEMBLED(float)
ASCONV_INSTANTIATE_ASSEMBLED(double)

#undef ASCONV_INSTANTIATE_ASSEMBLED

}  // namespace asconv
