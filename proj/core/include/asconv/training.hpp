#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "asconv/layers.hpp"
#include "asconv/model.hpp"
#include "asconv/rng.hpp"
#include "asconv/tensor.hpp"

namespace asconv {

/// Optimizer and data settings. Defaults are desk scale; the full-scale recipe is
/// batch 32, 256/128 patches, halving every 200000 of 1000000 iterations.
struct TrainConfig {
  double lr0 = 5e-4;
  std::size_t halve_every = 2000;
  std::size_t total_iters = 5000;
  std::size_t batch_size = 8;
  std::size_t hr_patch = 64;
  std::size_t lr_patch = 32;
  double beta1 = 0.9;
  double beta2 = 0.9999;
  double adam_eps = 1e-8;
  double charbonnier_eps = 1e-3;
  std::uint64_t seed = 0;
  bool augment = true;
  std::size_t log_every = 100;
  std::size_t eval_every = 0;  // 0 disables periodic evaluation

  /// Throws ValueError describing the first invalid field.
  void validate(std::size_t scale = 2) const;

  bool operator==(const TrainConfig&) const = default;
};

template <typename Real>
struct LossResult {
  double value = 0.0;
  Tensor<Real> grad;  // dL/dpred
};

/// mean(sqrt((pred - target)^2 + eps^2)) and its gradient.
template <typename Real>
LossResult<Real> charbonnier_loss(const Tensor<Real>& pred, const Tensor<Real>& target, double eps);

/// First and second moments, one pair per parameter in ParamStore order.
template <typename Real>
struct AdamState {
  std::uint64_t step = 0;
  std::vector<Tensor<Real>> m;
  std::vector<Tensor<Real>> v;

  bool empty() const { return m.empty(); }
};

struct AdamHyper {
  double beta1 = 0.9;
  double beta2 = 0.9999;
  double eps = 1e-8;
};

/// One bias-corrected Adam update of every parameter, then zeroes the grads.
/// A fresh (empty) state is sized on first use. A store without parameters
/// is a no-op apart from the step counter.
template <typename Real>
void adam_step(ParamStore<Real>& store, AdamState<Real>& state, double lr, const AdamHyper& hyper);

/// lr0 * 0.5^floor(iter / halve_every).
double lr_at(std::size_t iter, const TrainConfig& config);

/// An aligned LR/HR image pair, each [1, 3, H, W] in [0, 1].
struct ImagePair {
  std::string name;
  TensorF lr;
  TensorF hr;
};

/// Random aligned crop: LR window at (x, y) of lr_patch, HR window at
/// (2x, 2y) of hr_patch. Returns ([1,3,p,p], [1,3,2p,2p]).
std::pair<TensorF, TensorF> sample_patch_pair(const ImagePair& pair, Rng& rng,
                                              const TrainConfig& config);

/// Dihedral transform of an image batch. Bit 2 transposes H and W, then bit 0
/// flips horizontally and bit 1 flips vertically; code 0 is the identity.
/// Throws ShapeError when a transpose is requested on a non-square image.
template <typename Real>
Tensor<Real> apply_dihedral(const Tensor<Real>& x, unsigned code);

/// Draws one of the 8 transforms uniformly and applies it to both patches.
std::pair<TensorF, TensorF> augment_pair(const TensorF& lr, const TensorF& hr, Rng& rng);

struct TrainLogRecord {
  std::size_t iter = 0;
  double lr = 0.0;
  double loss = 0.0;
  std::optional<double> psnr_eval;
};

/// Everything that evolves during training besides the model parameters.
struct TrainState {
  AdamState<float> adam;
  Rng rng;
  std::size_t iteration = 0;  // completed iterations

  explicit TrainState(std::uint64_t seed = 0) : rng(seed) {}
};

/// Mean PSNR of the model's evaluation-mode output over full images.
double evaluate_psnr(const AsConvSR<float>& model, const std::vector<ImagePair>& data);

/// Mean PSNR of bicubic x2 upscaling over the same images.
double bicubic_psnr(const std::vector<ImagePair>& data);

/// Runs iterations state.iteration .. config.total_iters - 1. Each iteration
/// draws batch_size (image, crop, transform) samples from state.rng, runs
/// forward, Charbonnier loss, backward and an Adam step with lr_at(iter).
/// Records every log_every-th iteration (and the last) and, when
/// eval_every > 0, the evaluation-set PSNR every eval_every iterations.
/// CSV lines `iter,lr,loss,psnr_eval` go to `csv` when given (header
/// included when state.iteration is 0). `eval_set` defaults to `data`.
/// A non-finite loss throws NumericError with the iteration, learning rate
/// and largest parameter magnitude.
std::vector<TrainLogRecord> train_loop(AsConvSR<float>& model, const std::vector<ImagePair>& data,
                                       const TrainConfig& config, TrainState& state,
                                       std::ostream* csv = nullptr,
                                       const std::vector<ImagePair>* eval_set = nullptr);

}  // namespace asconv
