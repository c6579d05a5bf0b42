#include "asconv/model.hpp"

#include <stdexcept>

namespace asconv {

void ModelConfig::validate() const {
  auto fail = [](const std::string& msg) { throw ValueError("invalid model config: " + msg); };
  if (scale != 2) fail("scale must be 2, got " + std::to_string(scale));
  if (unshuffle < 1 || unshuffle > 4) fail("unshuffle must be in [1,4], got " + std::to_string(unshuffle));
  if (channels < 1) fail("channels must be >= 1");
  if (num_blocks < 1) fail("num_blocks must be >= 1");
  if (kernel_size < 1 || kernel_size % 2 == 0) fail("kernel_size must be odd and >= 1");
  if (conv_mode != ConvMode::Plain && num_bases < 1) fail("num_bases must be >= 1");
}

ModelConfig preset_asconvsr() { return ModelConfig{}; }

ModelConfig preset_asconvsr_l() {
  ModelConfig c;
  c.channels = 128;
  c.num_blocks = 2;
  c.num_bases = 128;
  return c;
}

std::optional<ModelConfig> preset_by_name(const std::string& name) {
  if (name == "asconvsr") return preset_asconvsr();
  if (name == "asconvsr-l") return preset_asconvsr_l();
  return std::nullopt;
}

std::string to_string(ConvMode mode) {
  switch (mode) {
    case ConvMode::Plain: return "plain";
    case ConvMode::Dynamic: return "dynamic";
    case ConvMode::Assembled: return "assembled";
  }
  return "?";
}

std::string to_string(Activation act) { return act == Activation::Relu ? "relu" : "none"; }
std::string to_string(CoeffNorm norm) { return norm == CoeffNorm::Softmax ? "softmax" : "none"; }
std::string to_string(InitScheme scheme) {
  return scheme == InitScheme::ResidualEquivalent ? "residual_equivalent" : "he_normal";
}

namespace {

std::string block_prefix(std::size_t b) { return "block" + std::to_string(b); }

// Coefficient rows produced by one control module.
std::size_t control_rows(const ModelConfig& c) {
  return c.conv_mode == ConvMode::Assembled ? c.channels : 1;
}

}  // namespace

std::vector<LayerRecord> describe_layers(const ModelConfig& c) {
  c.validate();
  const std::size_t r = c.unshuffle;
  const std::size_t k = c.kernel_size;
  std::vector<LayerRecord> out;
  out.push_back({"unshuffle", LayerKind::PixelUnshuffle, 3, 3 * r * r, 0, r, false});
  out.push_back({"head", LayerKind::Conv, 3 * r * r, c.channels, k, r, c.bias});
  const LayerKind block_kind = c.conv_mode == ConvMode::Plain     ? LayerKind::Conv
                               : c.conv_mode == ConvMode::Dynamic ? LayerKind::DynamicConv
                                                                  : LayerKind::AssembledConv;
  const std::size_t ctrl_out = control_rows(c) * c.num_bases;
  for (std::size_t b = 0; b < c.num_blocks; ++b) {
    const std::string p = block_prefix(b);
    const bool has_control = c.conv_mode != ConvMode::Plain;
    if (has_control && c.shared_control) {
      out.push_back({p + ".control", LayerKind::Control, c.channels, ctrl_out, 1, r, c.control_bias});
    }
    for (std::size_t j = 1; j <= 3; ++j) {
      const std::string name = p + ".conv" + std::to_string(j);
      if (has_control && !c.shared_control) {
        out.push_back({name + ".control", LayerKind::Control, c.channels, ctrl_out, 1, r,
                       c.control_bias});
      }
      out.push_back({name, block_kind, c.channels, c.channels, k, r, c.bias});
    }
  }
  out.push_back({"tail", LayerKind::Conv, c.channels, c.tail_channels(), k, r, c.bias});
  out.push_back({"shuffle1", LayerKind::PixelShuffle, c.tail_channels(), 3 * c.scale * c.scale, 0, 1, false});
  if (c.global_skip) {
    out.push_back({"skip", LayerKind::RepeatUpscale, 3, 3 * c.scale * c.scale, 0, 1, false});
    out.push_back({"skip_add", LayerKind::Add, 3 * c.scale * c.scale, 3 * c.scale * c.scale, 0, 1, false});
  }
  out.push_back({"shuffle2", LayerKind::PixelShuffle, 3 * c.scale * c.scale, 3, 0, 1, false});
  return out;
}

std::size_t param_count(const ModelConfig& c) {
  std::size_t n = 0;
  for (const auto& l : describe_layers(c)) {
    const std::size_t bias = l.bias ? l.c_out : 0;
    switch (l.kind) {
      case LayerKind::Conv:
      case LayerKind::Control:
        n += l.c_out * l.c_in * l.kernel * l.kernel + bias;
        break;
      case LayerKind::AssembledConv:
        n += c.num_bases * l.c_in * l.kernel * l.kernel + bias;
        break;
      case LayerKind::DynamicConv:
        n += c.num_bases * l.c_out * l.c_in * l.kernel * l.kernel + bias;
        break;
      default:
        break;
    }
  }
  return n;
}

std::uint64_t conv_flops(std::size_t c_in, std::size_t c_out, std::size_t kernel,
                         std::size_t height, std::size_t width, bool bias) {
  const std::uint64_t taps = static_cast<std::uint64_t>(c_in) * kernel * kernel;
  const std::uint64_t outputs = static_cast<std::uint64_t>(height) * width * c_out;
  return (taps + taps - 1) * outputs + (bias ? outputs : 0);
}

FlopsReport flops_estimate(const ModelConfig& c, std::size_t height, std::size_t width) {
  const std::size_t r = c.unshuffle;
  if (height == 0 || width == 0 || height % r != 0 || width % r != 0) {
    throw ShapeError("flops_estimate: " + std::to_string(width) + "x" + std::to_string(height) +
                     " not divisible by unshuffle factor " + std::to_string(r));
  }
  const std::size_t h = height / r, w = width / r;
  FlopsReport rep;
  auto push_conv = [&](const LayerRecord& l) {
    FlopsEntry e{l.name, l.c_in, l.c_out, l.kernel, h, w,
                 conv_flops(l.c_in, l.c_out, l.kernel, h, w, l.bias),
                 static_cast<std::uint64_t>(l.c_in) * l.kernel * l.kernel * h * w * l.c_out};
    rep.conv_flops += e.flops;
    rep.conv_macs += e.macs;
    rep.convs.push_back(e);
  };
  auto push_overhead = [&](FlopsEntry e) {
    rep.overhead_flops += e.flops;
    rep.overhead_macs += e.macs;
    rep.overhead.push_back(std::move(e));
  };
  for (const auto& l : describe_layers(c)) {
    switch (l.kind) {
      case LayerKind::Conv:
        push_conv(l);
        break;
      case LayerKind::AssembledConv:
      case LayerKind::DynamicConv: {
        push_conv(l);
        // [rows, E] x [E, n] product building one sample's kernels; the same
        // count (C_o * C_i * k^2 outputs of length-E dots) for both modes.
        const std::uint64_t outputs = static_cast<std::uint64_t>(l.c_out) * l.c_in * l.kernel * l.kernel;
        const std::uint64_t e = c.num_bases;
        push_overhead({l.name + ".assemble", e, l.c_out, l.kernel, 1, 1, (2 * e - 1) * outputs,
                       e * outputs});
        break;
      }
      case LayerKind::Control: {
        const std::uint64_t pool = static_cast<std::uint64_t>(l.c_in) * h * w;
        push_overhead({l.name + ".pool", l.c_in, l.c_in, 0, h, w, pool, pool});
        push_overhead({l.name + ".fc", l.c_in, l.c_out, 1, 1, 1,
                       conv_flops(l.c_in, l.c_out, 1, 1, 1, l.bias),
                       static_cast<std::uint64_t>(l.c_in) * l.c_out});
        break;
      }
      default:
        break;
    }
  }
  return rep;
}

template <typename Real>
AsConvSR<Real>::AsConvSR(const ModelConfig& config) : config_(config) {
  config_.validate();
  layers_ = describe_layers(config_);
  register_params();
}

template <typename Real>
AsConvSR<Real>::AsConvSR(const ModelConfig& config, Rng& rng) : AsConvSR(config) {
  init_report_ = init_params(params_, config_.init, rng, config_.num_bases);
  // Zero tail: an untrained model is exactly the nearest-neighbour skip.
  params_.value("tail.weight").fill(Real(0));
}

template <typename Real>
std::string AsConvSR<Real>::prefix(std::size_t block) const {
  return block_prefix(block);
}

template <typename Real>
std::string AsConvSR<Real>::conv_name(std::size_t block, std::size_t conv) const {
  return block_prefix(block) + ".conv" + std::to_string(conv + 1);
}

template <typename Real>
std::string AsConvSR<Real>::control_name(std::size_t block, std::size_t conv) const {
  return config_.shared_control ? block_prefix(block) + ".control"
                                : conv_name(block, conv) + ".control";
}

template <typename Real>
void AsConvSR<Real>::register_params() {
  const std::size_t c = config_.channels, k = config_.kernel_size, e = config_.num_bases;
  const std::size_t rows = control_rows(config_);
  ConvLayer{"head", 3 * config_.unshuffle * config_.unshuffle, c, k, config_.bias}
      .register_params(params_);
  auto add_control = [&](const std::string& name) {
    params_.add(name + ".weight", Shape{rows * e, c, 1, 1}, ParamKind::ControlWeight);
    if (config_.control_bias) params_.add(name + ".bias", Shape{rows * e}, ParamKind::ControlBias);
  };
  for (std::size_t b = 0; b < config_.num_blocks; ++b) {
    if (config_.conv_mode != ConvMode::Plain && config_.shared_control) add_control(prefix(b) + ".control");
    for (std::size_t j = 0; j < 3; ++j) {
      const std::string name = conv_name(b, j);
      switch (config_.conv_mode) {
        case ConvMode::Plain:
          ConvLayer{name, c, c, k, config_.bias}.register_params(params_);
          continue;
        case ConvMode::Assembled:
          if (!config_.shared_control) add_control(name + ".control");
          params_.add(name + ".basis", Shape{e, c, k, k}, ParamKind::KernelBasis);
          break;
        case ConvMode::Dynamic:
          if (!config_.shared_control) add_control(name + ".control");
          params_.add(name + ".bases", Shape{e, c, c, k, k}, ParamKind::DynamicBases);
          break;
      }
      if (config_.bias) params_.add(name + ".bias", Shape{c}, ParamKind::Bias);
    }
  }
  ConvLayer{"tail", c, config_.tail_channels(), k, config_.bias}.register_params(params_);
}

template <typename Real>
Tensor<Real> AsConvSR<Real>::activate(const Tensor<Real>& x) const {
  return config_.activation == Activation::Relu ? relu(x) : x;
}

template <typename Real>
Tensor<Real> AsConvSR<Real>::activate_backward(const Tensor<Real>& x, const Tensor<Real>& grad) const {
  return config_.activation == Activation::Relu ? relu_backward(x, grad) : grad;
}

template <typename Real>
Tensor<Real> AsConvSR<Real>::run_block(std::size_t index, const Tensor<Real>& x,
                                       BlockCache* cache) const {
  const ModelConfig& c = config_;
  const std::size_t rows = control_rows(c);
  auto coefficients_for = [&](std::size_t conv, const Tensor<Real>& input) {
    const std::string name = control_name(index, conv);
    const Tensor<Real>* bias = c.control_bias ? &params_.value(name + ".bias") : nullptr;
    return control_forward(input, params_.value(name + ".weight"), bias, rows, c.num_bases,
                           c.coeff_norm);
  };

  Tensor<Real> shared;
  if (c.conv_mode != ConvMode::Plain && c.shared_control) {
    shared = coefficients_for(0, x);
    if (cache) cache->coefficients.push_back(shared);
  }
  if (cache) cache->input = x;

  Tensor<Real> cur = x;
  for (std::size_t j = 0; j < 3; ++j) {
    const std::string name = conv_name(index, j);
    Tensor<Real> y;
    Tensor<Real> kernels;
    if (c.conv_mode == ConvMode::Plain) {
      y = ConvLayer{name, c.channels, c.channels, c.kernel_size, c.bias}.forward(params_, cur);
    } else {
      Tensor<Real> own;
      if (!c.shared_control) {
        own = coefficients_for(j, cur);
        if (cache) cache->coefficients.push_back(own);
      }
      const Tensor<Real>& coeff = c.shared_control ? shared : own;
      kernels = c.conv_mode == ConvMode::Assembled
                    ? assemble_kernels(coeff, params_.value(name + ".basis"))
                    : dynamic_assemble(coeff, params_.value(name + ".bases"));
      y = assembled_conv_forward(cur, kernels, c.bias ? &params_.value(name + ".bias") : nullptr);
    }
    Tensor<Real> next = j < 2 ? activate(y) : y;
    if (cache) {
      cache->conv_in[j] = std::move(cur);
      cache->kernels[j] = std::move(kernels);
      cache->conv_out[j] = std::move(y);
    }
    cur = std::move(next);
  }
  if (c.residual_in_block) cur = add(cur, x);
  return cur;
}

template <typename Real>
Tensor<Real> AsConvSR<Real>::run(const Tensor<Real>& lr, Mode mode, Cache* cache) const {
  const ModelConfig& c = config_;
  if (lr.rank() != 4 || lr.dim(1) != 3) {
    throw ShapeError("AsConvSR expects an RGB batch [B,3,H,W], got " + lr.shape().str());
  }
  Tensor<Real> u = pixel_unshuffle(lr, c.unshuffle);
  Tensor<Real> h = ConvLayer{"head", u.dim(1), c.channels, c.kernel_size, c.bias}.forward(params_, u);
  Tensor<Real> feat = activate(h);
  if (cache) {
    cache->lr = lr;
    cache->unshuffled = std::move(u);
    cache->head_out = std::move(h);
    cache->blocks.assign(c.num_blocks, BlockCache{});
  }
  for (std::size_t b = 0; b < c.num_blocks; ++b) {
    feat = run_block(b, feat, cache ? &cache->blocks[b] : nullptr);
  }
  Tensor<Real> t =
      ConvLayer{"tail", c.channels, c.tail_channels(), c.kernel_size, c.bias}.forward(params_, feat);
  if (cache) cache->tail_in = std::move(feat);
  Tensor<Real> s = pixel_shuffle(t, c.unshuffle);
  if (c.global_skip) s = add(s, repeat_upscale(lr, c.scale));
  Tensor<Real> out = pixel_shuffle(s, c.scale);
  if (cache) cache->mode = mode;
  if (mode == Mode::Eval) {
    if (cache) cache->pre_clamp = out;
    out = clamp(out, Real(0), Real(1));
  }
  return out;
}

template <typename Real>
Tensor<Real> AsConvSR<Real>::forward(const Tensor<Real>& lr, Mode mode) {
  Cache cache;
  Tensor<Real> out = run(lr, mode, &cache);
  cache_ = std::move(cache);
  return out;
}

template <typename Real>
Tensor<Real> AsConvSR<Real>::infer(const Tensor<Real>& lr, Mode mode) const {
  return run(lr, mode, nullptr);
}

template <typename Real>
Tensor<Real> AsConvSR<Real>::block_backward(std::size_t index, const BlockCache& cache,
                                            const Tensor<Real>& grad) {
  const ModelConfig& c = config_;
  Tensor<Real> g = grad;
  Tensor<Real> shared_grad;
  if (c.conv_mode != ConvMode::Plain && c.shared_control) {
    shared_grad = Tensor<Real>(cache.coefficients.front().shape());
  }
  auto control_back = [&](std::size_t conv, const Tensor<Real>& input, const Tensor<Real>& coeff,
                          const Tensor<Real>& grad_coeff) {
    const std::string name = control_name(index, conv);
    auto cg = control_backward(input, params_.value(name + ".weight"), coeff, grad_coeff,
                               c.coeff_norm, c.control_bias);
    accumulate(params_.grad(name + ".weight"), cg.weight);
    if (c.control_bias) accumulate(params_.grad(name + ".bias"), cg.bias);
    return std::move(cg.input);
  };

  for (std::size_t jj = 3; jj-- > 0;) {
    if (jj < 2) g = activate_backward(cache.conv_out[jj], g);
    const std::string name = conv_name(index, jj);
    if (c.conv_mode == ConvMode::Plain) {
      g = ConvLayer{name, c.channels, c.channels, c.kernel_size, c.bias}.backward(
          params_, cache.conv_in[jj], g);
      continue;
    }
    auto conv = assembled_conv_backward(cache.conv_in[jj], cache.kernels[jj], g, c.bias);
    if (c.bias) accumulate(params_.grad(name + ".bias"), conv.bias);
    const Tensor<Real>& coeff = c.shared_control ? cache.coefficients.front() : cache.coefficients[jj];
    Tensor<Real> grad_coeff;
    if (c.conv_mode == ConvMode::Assembled) {
      auto ag = assemble_kernels_backward(coeff, params_.value(name + ".basis"), conv.kernels);
      accumulate(params_.grad(name + ".basis"), ag.basis);
      grad_coeff = std::move(ag.coefficients);
    } else {
      auto dg = dynamic_assemble_backward(coeff, params_.value(name + ".bases"), conv.kernels);
      accumulate(params_.grad(name + ".bases"), dg.bases);
      grad_coeff = std::move(dg.coefficients);
    }
    if (c.shared_control) {
      accumulate(shared_grad, grad_coeff);
    } else {
      accumulate(conv.input, control_back(jj, cache.conv_in[jj], coeff, grad_coeff));
    }
    g = std::move(conv.input);
  }
  if (c.residual_in_block) accumulate(g, grad);
  if (c.conv_mode != ConvMode::Plain && c.shared_control) {
    accumulate(g, control_back(0, cache.input, cache.coefficients.front(), shared_grad));
  }
  return g;
}

template <typename Real>
Tensor<Real> AsConvSR<Real>::backward(const Tensor<Real>& grad_out) {
  if (!cache_) throw std::logic_error("AsConvSR::backward called without a cached forward pass");
  const Cache& cache = *cache_;
  const ModelConfig& c = config_;
  Tensor<Real> g = grad_out;
  if (cache.mode == Mode::Eval) g = clamp_backward(cache.pre_clamp, Real(0), Real(1), g);

  Tensor<Real> g_sum = pixel_shuffle_backward(g, c.scale);
  Tensor<Real> g_lr = c.global_skip ? repeat_upscale_backward(g_sum, c.scale)
                                    : Tensor<Real>(cache.lr.shape());
  Tensor<Real> g_feat = ConvLayer{"tail", c.channels, c.tail_channels(), c.kernel_size, c.bias}
                            .backward(params_, cache.tail_in, pixel_shuffle_backward(g_sum, c.unshuffle));
  for (std::size_t b = c.num_blocks; b-- > 0;) {
    g_feat = block_backward(b, cache.blocks[b], g_feat);
  }
  g_feat = activate_backward(cache.head_out, g_feat);
  Tensor<Real> g_u =
      ConvLayer{"head", cache.unshuffled.dim(1), c.channels, c.kernel_size, c.bias}.backward(
          params_, cache.unshuffled, g_feat);
  accumulate(g_lr, pixel_unshuffle_backward(g_u, c.unshuffle));
  return g_lr;
}

template class AsConvSR<float>;
template class AsConvSR<double>;

}  // namespace asconv
