#include <gtest/gtest.h>

#include <cmath>
#include <set>
#include <sstream>

#include "asconv/error.hpp"
#include "asconv/training.hpp"
#include "oracles.hpp"
#include "synthetic.hpp"

namespace asconv {
namespace {

using testing::nearest_upsample;
using testing::random_tensor;

TEST(Charbonnier, EqualInputsGiveEps) {
  Rng rng(1);
  const TensorD a = random_tensor(rng, Shape{2, 3, 4, 4});
  const auto r = charbonnier_loss(a, a, 1e-3);
  EXPECT_NEAR(r.value, 1e-3, 1e-15);
  EXPECT_EQ(r.grad, TensorD(a.shape()));
}

TEST(Charbonnier, SingleElement) {
  const auto r = charbonnier_loss(TensorD(Shape{1}, {3.0}), TensorD(Shape{1}, {0.0}), 1e-3);
  EXPECT_DOUBLE_EQ(r.value, std::sqrt(9.0 + 1e-6));
  EXPECT_NEAR(r.value, 3.00000017, 1e-8);
  EXPECT_DOUBLE_EQ(r.grad[0], 3.0 / std::sqrt(9.0 + 1e-6));
}

TEST(Charbonnier, GradientMatchesFormulaAndIsBounded) {
  Rng rng(2);
  for (int trial = 0; trial < 20; ++trial) {
    const TensorD p = random_tensor(rng, Shape{1, 3, 5, 5});
    const TensorD t = random_tensor(rng, Shape{1, 3, 5, 5});
    const double eps = rng.uniform(1e-4, 1e-1);
    const auto r = charbonnier_loss(p, t, eps);
    const double n = static_cast<double>(p.numel());
    double sum = 0;
    for (std::size_t i = 0; i < p.numel(); ++i) {
      const double d = p[i] - t[i];
      sum += std::sqrt(d * d + eps * eps);
      EXPECT_DOUBLE_EQ(r.grad[i], d / std::sqrt(d * d + eps * eps) / n);
      EXPECT_LT(std::fabs(r.grad[i]) * n, 1.0);
    }
    EXPECT_NEAR(r.value, sum / n, 1e-14);
    EXPECT_GT(r.value, eps);
  }
}

TEST(Charbonnier, Errors) {
  EXPECT_THROW(charbonnier_loss(TensorD(Shape{2}), TensorD(Shape{3}), 1e-3), ShapeError);
  EXPECT_THROW(charbonnier_loss(TensorD(Shape{2}), TensorD(Shape{2}), 0.0), ValueError);
}

ParamStore<double> scalar_store(double value, double grad) {
  ParamStore<double> store;
  auto& p = store.add("theta", Shape{1}, ParamKind::Bias);
  p.value[0] = value;
  p.grad[0] = grad;
  return store;
}

TEST(Adam, ZeroGradientLeavesParameters) {
  Rng rng(3);
  ParamStore<double> store;
  store.add("a", Shape{3, 4}, ParamKind::ConvWeight).value = random_tensor(rng, Shape{3, 4});
  const TensorD before = store.value("a");
  AdamState<double> state;
  adam_step(store, state, 0.1, AdamHyper{});
  EXPECT_EQ(store.value("a"), before);
  EXPECT_EQ(state.step, 1u);
  ASSERT_EQ(state.m.size(), 1u);
}

TEST(Adam, FirstStepMovesByLearningRate) {
  auto store = scalar_store(0.5, 1.0);
  AdamState<double> state;
  adam_step(store, state, 0.1, AdamHyper{0.9, 0.9999, 1e-8});
  EXPECT_NEAR(store.value("theta")[0], 0.4, 1e-8);
  EXPECT_EQ(store.grad("theta")[0], 0.0);
}

TEST(Adam, TwoStepsMatchHandEvaluation) {
  const double b1 = 0.9, b2 = 0.9999, eps = 1e-8, lr = 0.01;
  auto store = scalar_store(1.0, 0.3);
  AdamState<double> state;
  adam_step(store, state, lr, AdamHyper{b1, b2, eps});
  store.grad("theta")[0] = -0.7;
  adam_step(store, state, lr, AdamHyper{b1, b2, eps});

  double theta = 1.0, m = 0, v = 0;
  const double gs[2] = {0.3, -0.7};
  for (int t = 1; t <= 2; ++t) {
    m = b1 * m + (1 - b1) * gs[t - 1];
    v = b2 * v + (1 - b2) * gs[t - 1] * gs[t - 1];
    theta -= lr * (m / (1 - std::pow(b1, t))) / (std::sqrt(v / (1 - std::pow(b2, t))) + eps);
  }
  EXPECT_NEAR(store.value("theta")[0], theta, 1e-15);
  EXPECT_NEAR(state.m[0][0], m, 1e-15);
  EXPECT_NEAR(state.v[0][0], v, 1e-15);
}

TEST(Adam, LargeGradientStepsAgainstSign) {
  for (double g : {-1e6, -3e3, 5e4, 1e8}) {
    auto store = scalar_store(0.0, g);
    AdamState<double> state;
    adam_step(store, state, 1e-3, AdamHyper{});
    EXPECT_NEAR(store.value("theta")[0], g > 0 ? -1e-3 : 1e-3, 1e-12) << g;
  }
}

TEST(Adam, EqualGradientsEqualUpdates) {
  ParamStore<double> store;
  store.add("a", Shape{2}, ParamKind::Bias);
  store.add("b", Shape{2}, ParamKind::Bias);
  AdamState<double> state;
  for (int step = 0; step < 5; ++step) {
    for (const char* n : {"a", "b"}) {
      store.grad(n)[0] = 0.25 * step - 0.4;
      store.grad(n)[1] = 0.25 * step - 0.4;
    }
    adam_step(store, state, 0.05, AdamHyper{});
  }
  EXPECT_EQ(store.value("a")[0], store.value("a")[1]);
  EXPECT_EQ(store.value("a"), store.value("b"));
  for (double v : state.v[0].data()) EXPECT_GE(v, 0.0);
}

TEST(Adam, EmptyStoreAndMismatchedState) {
  ParamStore<double> empty;
  AdamState<double> state;
  adam_step(empty, state, 0.1, AdamHyper{});
  EXPECT_EQ(state.step, 1u);
  auto store = scalar_store(0, 1);
  AdamState<double> wrong;
  wrong.m.emplace_back(Shape{2});
  wrong.v.emplace_back(Shape{2});
  EXPECT_THROW(adam_step(store, wrong, 0.1, AdamHyper{}), ShapeError);
}

TEST(Schedule, Halving) {
  TrainConfig c;
  c.halve_every = 2000;
  EXPECT_DOUBLE_EQ(lr_at(0, c), 5e-4);
  EXPECT_DOUBLE_EQ(lr_at(1999, c), 5e-4);
  EXPECT_DOUBLE_EQ(lr_at(2000, c), 2.5e-4);
  EXPECT_DOUBLE_EQ(lr_at(4000, c), 1.25e-4);
  for (std::size_t it = 1; it < 20000; it += 97) EXPECT_LE(lr_at(it, c), lr_at(it - 1, c));
}

TEST(TrainConfigCheck, Validation) {
  TrainConfig c;
  EXPECT_NO_THROW(c.validate());
  c.hr_patch = 63;
  EXPECT_THROW(c.validate(), ValueError);
  c = TrainConfig{};
  c.beta2 = 1.0;
  EXPECT_THROW(c.validate(), ValueError);
  c = TrainConfig{};
  c.batch_size = 0;
  EXPECT_THROW(c.validate(), ValueError);
}

// HR is the exact nearest-neighbour x2 of LR, so an aligned crop satisfies
// hr[2y + dy, 2x + dx] == lr[y, x].
ImagePair nearest_pair(Rng& rng, std::size_t h, std::size_t w) {
  ImagePair p;
  p.name = "nn";
  p.lr = rng_fill<float>(rng, Shape{1, 3, h, w}, Uniform{0, 1});
  p.hr = nearest_upsample(p.lr, 2);
  return p;
}

void expect_aligned(const TensorF& lr, const TensorF& hr) {
  ASSERT_EQ(hr.dim(2), 2 * lr.dim(2));
  ASSERT_EQ(hr.dim(3), 2 * lr.dim(3));
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t y = 0; y < hr.dim(2); ++y)
      for (std::size_t x = 0; x < hr.dim(3); ++x) ASSERT_EQ(hr.at(0, c, y, x), lr.at(0, c, y / 2, x / 2));
}

TEST(PatchSampling, AlignedCrops) {
  Rng rng(4);
  const ImagePair pair = nearest_pair(rng, 23, 31);
  TrainConfig c;
  c.lr_patch = 8;
  c.hr_patch = 16;
  std::set<std::pair<float, float>> corners;
  for (int i = 0; i < 100; ++i) {
    auto [lr, hr] = sample_patch_pair(pair, rng, c);
    EXPECT_EQ(lr.shape(), (Shape{1, 3, 8, 8}));
    EXPECT_EQ(hr.shape(), (Shape{1, 3, 16, 16}));
    expect_aligned(lr, hr);
    corners.insert({lr[0], lr[1]});
  }
  EXPECT_GT(corners.size(), 20u);
}

TEST(PatchSampling, FullSizeShapesAndDeterminism) {
  Rng rng(5);
  const ImagePair pair = nearest_pair(rng, 130, 140);
  TrainConfig c;
  c.lr_patch = 128;
  c.hr_patch = 256;
  Rng a(9), b(9);
  for (int i = 0; i < 5; ++i) {
    auto [la, ha] = sample_patch_pair(pair, a, c);
    auto [lb, hb] = sample_patch_pair(pair, b, c);
    EXPECT_EQ(la.shape(), (Shape{1, 3, 128, 128}));
    EXPECT_EQ(ha.shape(), (Shape{1, 3, 256, 256}));
    EXPECT_EQ(la, lb);
    EXPECT_EQ(ha, hb);
  }
}

TEST(PatchSampling, TooSmall) {
  Rng rng(6);
  const ImagePair pair = nearest_pair(rng, 20, 40);
  TrainConfig c;  // 32 x 32 LR patch
  EXPECT_THROW(sample_patch_pair(pair, rng, c), ValueError);
}

TEST(Dihedral, IdentityAndInvolutions) {
  Rng rng(7);
  const TensorD x = random_tensor(rng, Shape{2, 3, 6, 6});
  EXPECT_EQ(apply_dihedral(x, 0), x);
  for (unsigned code : {1u, 2u, 3u, 4u}) EXPECT_EQ(apply_dihedral(apply_dihedral(x, code), code), x);
  std::set<std::vector<double>> distinct;
  for (unsigned code = 0; code < 8; ++code) distinct.insert(apply_dihedral(x, code).storage());
  EXPECT_EQ(distinct.size(), 8u);
}

TEST(Dihedral, DirectIndexOracle) {
  Rng rng(8);
  const TensorD x = random_tensor(rng, Shape{1, 1, 5, 5});
  const TensorD h = apply_dihedral(x, 1), v = apply_dihedral(x, 2), t = apply_dihedral(x, 4);
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t j = 0; j < 5; ++j) {
      EXPECT_EQ(h.at(0, 0, i, j), x.at(0, 0, i, 4 - j));
      EXPECT_EQ(v.at(0, 0, i, j), x.at(0, 0, 4 - i, j));
      EXPECT_EQ(t.at(0, 0, i, j), x.at(0, 0, j, i));
    }
}

TEST(Dihedral, Errors) {
  EXPECT_THROW(apply_dihedral(TensorD(Shape{1, 3, 4, 6}), 4), ShapeError);
  EXPECT_NO_THROW(apply_dihedral(TensorD(Shape{1, 3, 4, 6}), 3));
  EXPECT_THROW(apply_dihedral(TensorD(Shape{1, 3, 4, 4}), 8), ValueError);
}

TEST(Augment, AlignmentSurvivesEveryTransform) {
  Rng rng(9);
  const ImagePair pair = nearest_pair(rng, 16, 16);
  TrainConfig c;
  c.lr_patch = 6;
  c.hr_patch = 12;
  for (unsigned code = 0; code < 8; ++code) {
    auto [lr, hr] = sample_patch_pair(pair, rng, c);
    expect_aligned(apply_dihedral(lr, code), apply_dihedral(hr, code));
  }
  std::set<std::vector<float>> seen;
  const auto [lr, hr] = sample_patch_pair(pair, rng, c);
  for (int i = 0; i < 200; ++i) {
    auto [la, ha] = augment_pair(lr, hr, rng);
    expect_aligned(la, ha);
    seen.insert(la.storage());
  }
  EXPECT_EQ(seen.size(), 8u);
}

struct LoopFixture {
  ModelConfig model_config;
  TrainConfig train_config;
  std::vector<ImagePair> data;

  LoopFixture() {
    model_config.channels = 8;
    model_config.num_bases = 4;
    train_config.batch_size = 4;
    train_config.lr_patch = 8;
    train_config.hr_patch = 16;
    train_config.total_iters = 10;
    train_config.log_every = 1;
    Rng rng(10);
    data = testing::synthetic_pairs(rng, 4, 32, 32);
  }

  AsConvSR<float> model() const {
    Rng rng(11);
    return AsConvSR<float>(model_config, rng);
  }
};

TEST(TrainLoop, ZeroLearningRateLeavesParameters) {
  LoopFixture f;
  f.train_config.lr0 = 0;
  f.train_config.total_iters = 1;
  AsConvSR<float> m = f.model();
  const AsConvSR<float> before = f.model();
  TrainState state(1);
  train_loop(m, f.data, f.train_config, state);
  EXPECT_EQ(state.iteration, 1u);
  for (const auto& p : m.params().entries()) EXPECT_EQ(p.value, before.params().value(p.name)) << p.name;
}

TEST(TrainLoop, DeterministicUnderSeed) {
  LoopFixture f;
  AsConvSR<float> a = f.model(), b = f.model();
  TrainState sa(5), sb(5);
  std::ostringstream la, lb;
  train_loop(a, f.data, f.train_config, sa, &la);
  train_loop(b, f.data, f.train_config, sb, &lb);
  EXPECT_EQ(la.str(), lb.str());
  for (const auto& p : a.params().entries()) EXPECT_EQ(p.value, b.params().value(p.name)) << p.name;
  EXPECT_EQ(sa.rng.state(), sb.rng.state());

  AsConvSR<float> c = f.model();
  TrainState sc(6);
  train_loop(c, f.data, f.train_config, sc);
  EXPECT_NE(c.params().value("head.weight"), a.params().value("head.weight"));
}

TEST(TrainLoop, ResumingMatchesUninterruptedRun) {
  LoopFixture f;
  f.train_config.halve_every = 4;
  AsConvSR<float> full = f.model(), split = f.model();
  TrainState s_full(3), s_split(3);
  train_loop(full, f.data, f.train_config, s_full);
  TrainConfig first = f.train_config;
  first.total_iters = 6;
  train_loop(split, f.data, first, s_split);
  const auto log = train_loop(split, f.data, f.train_config, s_split);
  ASSERT_FALSE(log.empty());
  EXPECT_EQ(log.front().iter, 6u);
  for (const auto& p : full.params().entries()) EXPECT_EQ(p.value, split.params().value(p.name));
}

TEST(TrainLoop, CsvLog) {
  LoopFixture f;
  f.train_config.log_every = 4;
  f.train_config.eval_every = 5;
  AsConvSR<float> m = f.model();
  TrainState state(2);
  std::ostringstream csv;
  const auto log = train_loop(m, f.data, f.train_config, state, &csv);
  std::vector<std::string> lines;
  std::istringstream in(csv.str());
  for (std::string line; std::getline(in, line);) lines.push_back(line);
  // iterations 0, 4, 8 by log_every; 4 and 9 close evaluation windows.
  ASSERT_EQ(lines.size(), 5u);
  EXPECT_EQ(lines[0], "iter,lr,loss,psnr_eval");
  ASSERT_EQ(log.size(), 4u);
  EXPECT_EQ(log[0].iter, 0u);
  EXPECT_FALSE(log[0].psnr_eval);
  EXPECT_EQ(log[1].iter, 4u);
  EXPECT_TRUE(log[1].psnr_eval);
  EXPECT_EQ(log[3].iter, 9u);
  EXPECT_TRUE(log[3].psnr_eval);
  EXPECT_EQ(lines[1].substr(0, 2), "0,");
  EXPECT_EQ(lines[1].back(), ',');
}

TEST(TrainLoop, NonFiniteLossAborts) {
  LoopFixture f;
  AsConvSR<float> m = f.model();
  m.params().value("tail.weight")[0] = std::numeric_limits<float>::infinity();
  TrainState state(2);
  try {
    train_loop(m, f.data, f.train_config, state);
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("iteration 0"), std::string::npos) << e.what();
  }
}

TEST(TrainLoop, RejectsBadInput) {
  LoopFixture f;
  AsConvSR<float> m = f.model();
  TrainState state;
  EXPECT_THROW(train_loop(m, {}, f.train_config, state), ValueError);
  f.train_config.hr_patch = 15;
  EXPECT_THROW(train_loop(m, f.data, f.train_config, state), ValueError);
}

double mean_loss(const std::vector<TrainLogRecord>& log, std::size_t from, std::size_t to) {
  double sum = 0;
  std::size_t n = 0;
  for (const auto& r : log) {
    if (r.iter >= from && r.iter < to) {
      sum += r.loss;
      ++n;
    }
  }
  return sum / static_cast<double>(n);
}

// Stability smoke test: the loss must fall well below its early value with
// the global skip; without it the run only has to complete. Two pairs the
// size of one patch, no augmentation: every sample is the same crop.
TEST(TrainLoop, OverfitsTinyDataset) {
  for (bool skip : {true, false}) {
    LoopFixture f;
    Rng rng(10);
    f.data = testing::synthetic_pairs(rng, 2, 16, 16);
    f.model_config.global_skip = skip;
    f.train_config.batch_size = 2;
    f.train_config.augment = false;
    f.train_config.total_iters = 501;
    f.train_config.halve_every = 2000;
    AsConvSR<float> m = f.model();
    TrainState state(4);
    const auto log = train_loop(m, f.data, f.train_config, state);
    ASSERT_EQ(state.iteration, 501u);
    const double early = log[10].loss;
    const double late = mean_loss(log, 491, 501);
    EXPECT_TRUE(std::isfinite(late));
    if (skip) {
      EXPECT_LT(late, 0.5 * early) << "iteration 10 loss " << early;
    }
  }
}

}  // namespace
}  // namespace asconv
