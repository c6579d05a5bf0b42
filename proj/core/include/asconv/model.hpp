#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "asconv/assembled.hpp"
#include "asconv/layers.hpp"
#include "asconv/rng.hpp"
#include "asconv/tensor.hpp"

namespace asconv {

enum class ConvMode { Plain, Dynamic, Assembled };
enum class Activation { Relu, None };

/// Architecture hyperparameters. Defaults describe the small AsConvSR model:
/// one assembled block of 32 channels, pixel-unshuffle by 2, no bias and no
/// in-block residual.
struct ModelConfig {
  std::size_t scale = 2;        // only x2 is supported
  std::size_t unshuffle = 2;    // 1..4
  std::size_t channels = 32;
  std::size_t num_blocks = 1;
  std::size_t num_bases = 16;   // E
  std::size_t kernel_size = 3;
  ConvMode conv_mode = ConvMode::Assembled;
  bool bias = false;
  bool residual_in_block = false;
  CoeffNorm coeff_norm = CoeffNorm::None;
  Activation activation = Activation::Relu;
  bool shared_control = true;   // one control module per block, used by all three convs
  bool control_bias = true;
  bool global_skip = true;
  InitScheme init = InitScheme::HeNormal;

  /// 3 * scale^2 * unshuffle^2: the tail conv output that two pixel shuffles
  /// (by unshuffle, then by scale) turn into an RGB image. 48 for the defaults.
  std::size_t tail_channels() const { return 3 * scale * scale * unshuffle * unshuffle; }

  /// Throws ValueError describing the first invalid field.
  void validate() const;

  bool operator==(const ModelConfig&) const = default;
};

ModelConfig preset_asconvsr();
ModelConfig preset_asconvsr_l();
/// "asconvsr" or "asconvsr-l"; nullopt otherwise.
std::optional<ModelConfig> preset_by_name(const std::string& name);

std::string to_string(ConvMode mode);
std::string to_string(Activation act);
std::string to_string(CoeffNorm norm);
std::string to_string(InitScheme scheme);

enum class LayerKind {
  PixelUnshuffle,
  Conv,          // plain 3x3 conv (head, tail, plain-mode block convs)
  Control,       // pooling + 1x1 conv producing coefficients
  AssembledConv, // per-sample kernels from a basis
  DynamicConv,
  PixelShuffle,
  RepeatUpscale,
  Add,
};

/// One entry of the layer graph, in execution order. `spatial_div` is the
/// factor by which the layer's output resolution is below the LR input
/// (unshuffle for the feature convs).
struct LayerRecord {
  std::string name;
  LayerKind kind;
  std::size_t c_in = 0;
  std::size_t c_out = 0;
  std::size_t kernel = 0;
  std::size_t spatial_div = 1;
  bool bias = false;
};

std::vector<LayerRecord> describe_layers(const ModelConfig& config);

/// Learnable scalar count implied by a config, without building a model.
std::size_t param_count(const ModelConfig& config);

struct FlopsEntry {
  std::string layer;
  std::size_t c_in = 0;
  std::size_t c_out = 0;
  std::size_t kernel = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  std::uint64_t flops = 0;  // multiplies + adds
  std::uint64_t macs = 0;   // multiply-accumulates
};

struct FlopsReport {
  std::vector<FlopsEntry> convs;     // feature-map convolutions
  std::vector<FlopsEntry> overhead;  // pooling, control 1x1 convs, kernel assembly
  std::uint64_t conv_flops = 0;
  std::uint64_t conv_macs = 0;
  std::uint64_t overhead_flops = 0;
  std::uint64_t overhead_macs = 0;
  std::uint64_t total_flops() const { return conv_flops + overhead_flops; }
  std::uint64_t total_macs() const { return conv_macs + overhead_macs; }
};

/// FLOPs of a bias-free convolution producing an h x w x c_out map:
/// (c_in*k^2 multiplies + c_in*k^2 - 1 adds) per output element; a bias adds
/// one more add per output element.
std::uint64_t conv_flops(std::size_t c_in, std::size_t c_out, std::size_t kernel,
                         std::size_t height, std::size_t width, bool bias = false);

/// Per-image cost for an LR input of height x width. Throws ShapeError when
/// the size is not divisible by the unshuffle factor.
FlopsReport flops_estimate(const ModelConfig& config, std::size_t height, std::size_t width);

enum class Mode { Train, Eval };

/// The AsConvSR network:
///   pixel_unshuffle(r) -> conv3x3(3r^2 -> C) -> act
///   -> num_blocks x [control; conv(K1) act conv(K2) act conv(K3) (+ input)]
///   -> conv3x3(C -> tail_channels) -> pixel_shuffle(r)
///   -> + repeat_upscale(lr, scale) -> pixel_shuffle(scale)
template <typename Real>
class AsConvSR {
 public:
  /// Registers parameters and initializes them per config.init. The tail
  /// conv starts at zero, so the untrained output is nearest-neighbour x2.
  AsConvSR(const ModelConfig& config, Rng& rng);
  /// Registers zero-valued parameters (for loading checkpoints).
  explicit AsConvSR(const ModelConfig& config);

  const ModelConfig& config() const { return config_; }
  ParamStore<Real>& params() { return params_; }
  const ParamStore<Real>& params() const { return params_; }
  const std::vector<LayerRecord>& layers() const { return layers_; }
  const InitReport& init_report() const { return init_report_; }
  std::size_t param_count() const { return params_.scalar_count(); }

  /// Forward pass keeping the activations needed by backward(). Eval mode
  /// clamps the output to [0, 1].
  Tensor<Real> forward(const Tensor<Real>& lr, Mode mode = Mode::Train);

  /// Inference without caching; safe to call concurrently on a shared model.
  Tensor<Real> infer(const Tensor<Real>& lr, Mode mode = Mode::Eval) const;

  /// Accumulates parameter gradients for the most recent forward(). Returns
  /// dL/d(lr). Throws std::logic_error without a preceding forward().
  Tensor<Real> backward(const Tensor<Real>& grad_out);

  /// Drops cached activations.
  void clear_cache() { cache_.reset(); }

 private:
  struct BlockCache {
    Tensor<Real> input;
    std::vector<Tensor<Real>> coefficients;  // one if shared, else per conv
    Tensor<Real> conv_in[3];
    Tensor<Real> kernels[3];  // empty in plain mode
    Tensor<Real> conv_out[3];
  };
  struct Cache {
    Tensor<Real> lr;
    Tensor<Real> unshuffled;
    Tensor<Real> head_out;  // pre-activation
    std::vector<BlockCache> blocks;
    Tensor<Real> tail_in;
    Tensor<Real> pre_clamp;
    Mode mode = Mode::Train;
  };

  void register_params();
  Tensor<Real> run(const Tensor<Real>& lr, Mode mode, Cache* cache) const;
  Tensor<Real> run_block(std::size_t index, const Tensor<Real>& x, BlockCache* cache) const;
  Tensor<Real> block_backward(std::size_t index, const BlockCache& cache, const Tensor<Real>& grad);
  Tensor<Real> activate(const Tensor<Real>& x) const;
  Tensor<Real> activate_backward(const Tensor<Real>& x, const Tensor<Real>& grad) const;

  std::string prefix(std::size_t block) const;
  std::string conv_name(std::size_t block, std::size_t conv) const;
  std::string control_name(std::size_t block, std::size_t conv) const;

  ModelConfig config_;
  ParamStore<Real> params_;
  std::vector<LayerRecord> layers_;
  InitReport init_report_;
  std::optional<Cache> cache_;
};

extern template class AsConvSR<float>;
extern template class AsConvSR<double>;

}  // namespace asconv
