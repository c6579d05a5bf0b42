#include "asconv/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <ostream>
#include <sstream>
#include <string_view>

#include "asconv/metrics.hpp"
#include "asconv/ops.hpp"
#include "asconv/resize.hpp"

namespace asconv {

void TrainConfig::validate(std::size_t scale) const {
  auto fail = [](const std::string& msg) { throw ValueError("invalid train config: " + msg); };
  if (!(lr0 >= 0.0) || !std::isfinite(lr0)) fail("lr0 must be finite and >= 0");
  if (halve_every == 0) fail("halve_every must be >= 1");
  if (batch_size == 0) fail("batch_size must be >= 1");
  if (lr_patch == 0) fail("lr_patch must be >= 1");
  if (hr_patch != scale * lr_patch) {
    fail("hr_patch (" + std::to_string(hr_patch) + ") must equal " + std::to_string(scale) +
         " * lr_patch (" + std::to_string(lr_patch) + ")");
  }
  if (!(beta1 >= 0.0 && beta1 < 1.0)) fail("beta1 must be in [0, 1)");
  if (!(beta2 >= 0.0 && beta2 < 1.0)) fail("beta2 must be in [0, 1)");
  if (!(adam_eps > 0.0)) fail("adam_eps must be > 0");
  if (!(charbonnier_eps > 0.0)) fail("charbonnier_eps must be > 0");
  if (log_every == 0) fail("log_every must be >= 1");
}

template <typename Real>
LossResult<Real> charbonnier_loss(const Tensor<Real>& pred, const Tensor<Real>& target, double eps) {
  if (!(pred.shape() == target.shape())) {
    throw ShapeError("charbonnier_loss: shape mismatch " + pred.shape().str() + " vs " +
                     target.shape().str());
  }
  if (!(eps > 0.0)) throw ValueError("charbonnier_loss: eps must be > 0");
  if (pred.empty()) throw ShapeError("charbonnier_loss: empty tensors");
  const double n = static_cast<double>(pred.numel());
  const double eps2 = eps * eps;
  LossResult<Real> r;
  r.grad = Tensor<Real>(pred.shape());
  double sum = 0.0;
  for (std::size_t i = 0; i < pred.numel(); ++i) {
    const double d = static_cast<double>(pred[i]) - static_cast<double>(target[i]);
    const double s = std::sqrt(d * d + eps2);
    sum += s;
    r.grad[i] = static_cast<Real>(d / s / n);
  }
  r.value = sum / n;
  return r;
}

template <typename Real>
void adam_step(ParamStore<Real>& store, AdamState<Real>& state, double lr, const AdamHyper& hyper) {
  auto& entries = store.entries();
  if (state.empty() && !entries.empty()) {
    for (const auto& p : entries) {
      state.m.emplace_back(p.value.shape());
      state.v.emplace_back(p.value.shape());
    }
  }
  if (state.m.size() != entries.size() || state.v.size() != entries.size()) {
    throw ShapeError("adam_step: optimizer state has " + std::to_string(state.m.size()) +
                     " entries for " + std::to_string(entries.size()) + " parameters");
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(hyper.beta1, t);
  const double c2 = 1.0 - std::pow(hyper.beta2, t);
  for (std::size_t k = 0; k < entries.size(); ++k) {
    auto& p = entries[k];
    auto& m = state.m[k];
    auto& v = state.v[k];
    if (!(m.shape() == p.value.shape()) || !(v.shape() == p.value.shape())) {
      throw ShapeError("adam_step: state shape mismatch for '" + p.name + "'");
    }
    for (std::size_t i = 0; i < p.value.numel(); ++i) {
      const double g = static_cast<double>(p.grad[i]);
      const double mi = hyper.beta1 * static_cast<double>(m[i]) + (1.0 - hyper.beta1) * g;
      const double vi = hyper.beta2 * static_cast<double>(v[i]) + (1.0 - hyper.beta2) * g * g;
      m[i] = static_cast<Real>(mi);
      v[i] = static_cast<Real>(vi);
      const double update = lr * (mi / c1) / (std::sqrt(vi / c2) + hyper.eps);
      p.value[i] = static_cast<Real>(static_cast<double>(p.value[i]) - update);
    }
  }
  store.zero_grad();
}

double lr_at(std::size_t iter, const TrainConfig& config) {
  const std::size_t halvings = iter / std::max<std::size_t>(1, config.halve_every);
  return config.lr0 * std::ldexp(1.0, -static_cast<int>(std::min<std::size_t>(halvings, 2000)));
}

namespace {

TensorF crop(const TensorF& img, std::size_t x, std::size_t y, std::size_t size) {
  const std::size_t ch = img.dim(1), h = img.dim(2), w = img.dim(3);
  TensorF out(Shape{1, ch, size, size});
  for (std::size_t c = 0; c < ch; ++c) {
    for (std::size_t r = 0; r < size; ++r) {
      std::memcpy(&out.at(0, c, r, 0), img.data().data() + (c * h + y + r) * w + x,
                  size * sizeof(float));
    }
  }
  return out;
}

// Stacks [1,C,H,W] samples into [B,C,H,W].
TensorF stack(const std::vector<TensorF>& items) {
  const Shape& s = items.front().shape();
  TensorF out(Shape{items.size(), s[1], s[2], s[3]});
  const std::size_t n = s.numel();
  for (std::size_t i = 0; i < items.size(); ++i) {
    std::memcpy(out.data().data() + i * n, items[i].data().data(), n * sizeof(float));
  }
  return out;
}

double max_abs_param(const ParamStore<float>& store) {
  double m = 0.0;
  for (const auto& p : store.entries()) {
    for (float v : p.value.data()) m = std::max(m, static_cast<double>(std::fabs(v)));
  }
  return m;
}

}  // namespace

std::pair<TensorF, TensorF> sample_patch_pair(const ImagePair& pair, Rng& rng,
                                              const TrainConfig& config) {
  const std::size_t p = config.lr_patch;
  const std::size_t lh = pair.lr.dim(2), lw = pair.lr.dim(3);
  if (lh < p || lw < p) {
    throw ValueError("sample_patch_pair: '" + pair.name + "' LR " + std::to_string(lw) + "x" +
                     std::to_string(lh) + " is smaller than the " + std::to_string(p) + " patch");
  }
  if (pair.hr.dim(2) != 2 * lh || pair.hr.dim(3) != 2 * lw) {
    throw ShapeError("sample_patch_pair: '" + pair.name + "' HR is not twice the LR size");
  }
  const std::size_t x = rng.index(lw - p + 1);
  const std::size_t y = rng.index(lh - p + 1);
  return {crop(pair.lr, x, y, p), crop(pair.hr, 2 * x, 2 * y, 2 * p)};
}

template <typename Real>
Tensor<Real> apply_dihedral(const Tensor<Real>& x, unsigned code) {
  if (x.rank() != 4) throw ShapeError("apply_dihedral: expected [B,C,H,W], got " + x.shape().str());
  if (code > 7) throw ValueError("apply_dihedral: code must be in [0, 7]");
  const bool transpose = code & 4u, hflip = code & 1u, vflip = code & 2u;
  const std::size_t h = x.dim(2), w = x.dim(3);
  if (transpose && h != w) {
    throw ShapeError("apply_dihedral: transpose needs a square image, got " + x.shape().str());
  }
  Tensor<Real> out(x.shape());
  for (std::size_t b = 0; b < x.dim(0); ++b) {
    for (std::size_t c = 0; c < x.dim(1); ++c) {
      for (std::size_t i = 0; i < h; ++i) {
        for (std::size_t j = 0; j < w; ++j) {
          const std::size_t si = vflip ? h - 1 - i : i;
          const std::size_t sj = hflip ? w - 1 - j : j;
          out.at(b, c, i, j) = transpose ? x.at(b, c, sj, si) : x.at(b, c, si, sj);
        }
      }
    }
  }
  return out;
}

std::pair<TensorF, TensorF> augment_pair(const TensorF& lr, const TensorF& hr, Rng& rng) {
  const auto code = static_cast<unsigned>(rng.index(8));
  return {apply_dihedral(lr, code), apply_dihedral(hr, code)};
}

double evaluate_psnr(const AsConvSR<float>& model, const std::vector<ImagePair>& data) {
  if (data.empty()) throw ValueError("evaluate_psnr: empty evaluation set");
  double total = 0.0;
  for (const auto& pair : data) total += psnr_rgb(model.infer(pair.lr, Mode::Eval), pair.hr);
  return total / static_cast<double>(data.size());
}

double bicubic_psnr(const std::vector<ImagePair>& data) {
  if (data.empty()) throw ValueError("bicubic_psnr: empty evaluation set");
  double total = 0.0;
  for (const auto& pair : data) {
    TensorF up = clamp(bicubic_resize(pair.lr, pair.hr.dim(2), pair.hr.dim(3)), 0.0f, 1.0f);
    total += psnr_rgb(up, pair.hr);
  }
  return total / static_cast<double>(data.size());
}

std::vector<TrainLogRecord> train_loop(AsConvSR<float>& model, const std::vector<ImagePair>& data,
                                       const TrainConfig& config, TrainState& state,
                                       std::ostream* csv, const std::vector<ImagePair>* eval_set) {
  config.validate(model.config().scale);
  if (data.empty()) throw ValueError("train_loop: empty training set");
  const std::vector<ImagePair>& eval_data = eval_set ? *eval_set : data;
  const AdamHyper hyper{config.beta1, config.beta2, config.adam_eps};
  std::vector<TrainLogRecord> log;

  if (csv && state.iteration == 0) *csv << "iter,lr,loss,psnr_eval\n";
  model.params().zero_grad();
  for (std::size_t iter = state.iteration; iter < config.total_iters; ++iter) {
    std::vector<TensorF> lr_items, hr_items;
    for (std::size_t k = 0; k < config.batch_size; ++k) {
      const ImagePair& pair = data[state.rng.index(data.size())];
      auto [lp, hp] = sample_patch_pair(pair, state.rng, config);
      if (config.augment) std::tie(lp, hp) = augment_pair(lp, hp, state.rng);
      lr_items.push_back(std::move(lp));
      hr_items.push_back(std::move(hp));
    }
    const TensorF lr_batch = stack(lr_items);
    const TensorF hr_batch = stack(hr_items);
    const double lr = lr_at(iter, config);

    auto fail = [&](std::string_view what) {
      std::ostringstream msg;
      msg << what << " at iteration " << iter << " (lr " << lr << ", max |param| "
          << max_abs_param(model.params()) << ")";
      model.clear_cache();
      throw NumericError(msg.str());
    };
    LossResult<float> loss;
    try {
      loss = charbonnier_loss(model.forward(lr_batch, Mode::Train), hr_batch,
                              config.charbonnier_eps);
    } catch (const NumericError& e) {
      fail(e.what());
    }
    if (!std::isfinite(loss.value)) fail("non-finite loss");
    try {
      model.backward(loss.grad);
    } catch (const NumericError& e) {
      fail(e.what());
    }
    model.clear_cache();
    adam_step(model.params(), state.adam, lr, hyper);
    state.iteration = iter + 1;

    const bool last = iter + 1 == config.total_iters;
    const bool eval_now = config.eval_every > 0 && (state.iteration % config.eval_every == 0 || last);
    if (iter % config.log_every == 0 || last || eval_now) {
      TrainLogRecord rec{iter, lr, loss.value, std::nullopt};
      if (eval_now) rec.psnr_eval = evaluate_psnr(model, eval_data);
      if (csv) {
        *csv << rec.iter << ',' << rec.lr << ',' << rec.loss << ',';
        if (rec.psnr_eval) *csv << *rec.psnr_eval;
        *csv << '\n';
      }
      log.push_back(rec);
    }
  }
  return log;
}

template LossResult<float> charbonnier_loss<float>(const TensorF&, const TensorF&, double);
template LossResult<double> charbonnier_loss<double>(const TensorD&, const TensorD&, double);
template void adam_step<float>(ParamStore<float>&, AdamState<float>&, double, const AdamHyper&);
template void adam_step<double>(ParamStore<double>&, AdamState<double>&, double, const AdamHyper&);
template TensorF apply_dihedral<float>(const TensorF&, unsigned);
template TensorD apply_dihedral<double>(const TensorD&, unsigned);

}  // namespace asconv
