#pragma once

#include <cstddef>
#include <map>
#include <string>
#include <vector>

#include "asconv/ops.hpp"
#include "asconv/rng.hpp"
#include "asconv/tensor.hpp"

namespace asconv {

/// Space-to-channel rearrangement:
///   out[b, c*r*r + i*r + j, y, x] = in[b, c, y*r + i, x*r + j]
/// H and W must be divisible by r.
template <typename Real>
Tensor<Real> pixel_unshuffle(const Tensor<Real>& x, std::size_t r);

/// Exact inverse of pixel_unshuffle with the same index map. C must be
/// divisible by r*r.
template <typename Real>
Tensor<Real> pixel_shuffle(const Tensor<Real>& x, std::size_t r);

// Both rearrangements are permutations, so each one's gradient is the other.
template <typename Real>
Tensor<Real> pixel_unshuffle_backward(const Tensor<Real>& grad_out, std::size_t r) {
  return pixel_shuffle(grad_out, r);
}
template <typename Real>
Tensor<Real> pixel_shuffle_backward(const Tensor<Real>& grad_out, std::size_t r) {
  return pixel_unshuffle(grad_out, r);
}

/// Replicates channel c into channels [c*r*r, (c+1)*r*r). Followed by
/// pixel_shuffle(., r) this is nearest-neighbour upsampling by r.
template <typename Real>
Tensor<Real> repeat_upscale(const Tensor<Real>& x, std::size_t r);

/// Sums each group of r*r replicated channels back onto its source channel.
template <typename Real>
Tensor<Real> repeat_upscale_backward(const Tensor<Real>& grad_out, std::size_t r);

enum class ParamKind {
  ConvWeight,    // [C_o, C_i/g, k, k]
  Bias,          // [C_o]
  KernelBasis,   // assembled candidates [E, C_i, k, k]
  DynamicBases,  // whole-kernel candidates [E, C_o, C_i, k, k]
  ControlWeight, // 1x1 conv [C_o*E or E, C_i, 1, 1]
  ControlBias,
};

template <typename Real>
struct Param {
  std::string name;
  ParamKind kind;
  Tensor<Real> value;
  Tensor<Real> grad;
};

/// Named parameters with gradient buffers, iterated in registration order.
template <typename Real>
class ParamStore {
 public:
  /// Registers a zero-valued parameter. Throws ValueError on duplicate names.
  Param<Real>& add(const std::string& name, const Shape& shape, ParamKind kind);

  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  Param<Real>& get(const std::string& name);
  const Param<Real>& get(const std::string& name) const;

  Tensor<Real>& value(const std::string& name) { return get(name).value; }
  const Tensor<Real>& value(const std::string& name) const { return get(name).value; }
  Tensor<Real>& grad(const std::string& name) { return get(name).grad; }

  std::vector<Param<Real>>& entries() { return params_; }
  const std::vector<Param<Real>>& entries() const { return params_; }

  std::size_t size() const { return params_.size(); }
  /// Total learnable scalars.
  std::size_t scalar_count() const;

  void zero_grad();

 private:
  std::vector<Param<Real>> params_;
  std::map<std::string, std::size_t> index_;
};

/// Same-resolution convolution layer (padding k/2, stride 1) whose weight and
/// optional bias live in a ParamStore under "<name>.weight" / "<name>.bias".
struct ConvLayer {
  std::string name;
  std::size_t c_in = 0;
  std::size_t c_out = 0;
  std::size_t kernel = 3;
  bool bias = false;

  std::string weight_name() const { return name + ".weight"; }
  std::string bias_name() const { return name + ".bias"; }
  std::size_t param_count() const { return c_out * c_in * kernel * kernel + (bias ? c_out : 0); }

  template <typename Real>
  void register_params(ParamStore<Real>& store) const;

  template <typename Real>
  Tensor<Real> forward(const ParamStore<Real>& store, const Tensor<Real>& x) const;

  /// Accumulates weight/bias gradients into the store; returns dL/dx.
  template <typename Real>
  Tensor<Real> backward(ParamStore<Real>& store, const Tensor<Real>& x,
                        const Tensor<Real>& grad_out) const;
};

enum class InitScheme {
  HeNormal,
  // He-normal, then +1 on the centre tap [o, o, k/2, k/2] of every square
  // conv weight, making the conv start as identity plus noise.
  ResidualEquivalent,
};

struct InitReport {
  std::vector<std::string> notices;
};

/// Initializes every parameter in registration order:
///   ConvWeight, KernelBasis, DynamicBases: normal(0, sqrt(2 / fan_in)),
///     fan_in = C_i * k * k
///   Bias: zero
///   ControlBias: normal(0, sqrt(1 / E))  (E = bases mixed per output row)
///   ControlWeight: normal(0, 0.1 * sqrt(1 / (E * C_i)))
/// The control init keeps assembled kernels at He-normal scale while giving
/// each output channel distinct coefficients. Parameters for which the
/// identity tap is undefined are skipped under ResidualEquivalent and listed
/// in the report.
template <typename Real>
InitReport init_params(ParamStore<Real>& store, InitScheme scheme, Rng& rng,
                       std::size_t num_bases = 1);

/// Adds 1 to the centre tap [o, o, k/2, k/2] of every square ConvWeight
/// (C_i == C_o, odd k). On a zero weight the conv becomes the identity map.
/// Other kernel-shaped parameters are listed in the report and left as is.
template <typename Real>
InitReport apply_identity_taps(ParamStore<Real>& store);

}  // namespace asconv
