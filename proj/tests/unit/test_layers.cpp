#include <gtest/gtest.h>

#include <algorithm>

#include "asconv/error.hpp"
#include "asconv/layers.hpp"
#include "oracles.hpp"

namespace asconv {
namespace {

using testing::finite_difference_error;
using testing::random_tensor;
using testing::sum_product;

TEST(PixelUnshuffle, IndexMap) {
  TensorD x(Shape{1, 1, 2, 2}, {1, 2, 3, 4});
  TensorD y = pixel_unshuffle(x, 2);
  EXPECT_EQ(y.shape(), (Shape{1, 4, 1, 1}));
  EXPECT_EQ(y.storage(), (std::vector<double>{1, 2, 3, 4}));
  EXPECT_EQ(pixel_shuffle(y, 2), x);
}

TEST(PixelUnshuffle, GeneralIndexMap) {
  Rng rng(1);
  const std::size_t r = 3;
  TensorD x = random_tensor(rng, Shape{2, 2, 6, 9});
  TensorD y = pixel_unshuffle(x, r);
  for (std::size_t b = 0; b < 2; ++b)
    for (std::size_t c = 0; c < 2; ++c)
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < r; ++j)
          for (std::size_t yy = 0; yy < 2; ++yy)
            for (std::size_t xx = 0; xx < 3; ++xx)
              ASSERT_EQ(y.at(b, c * r * r + i * r + j, yy, xx), x.at(b, c, yy * r + i, xx * r + j));
}

TEST(PixelUnshuffle, FullHdShape) {
  TensorF x(Shape{1, 3, 1080, 1920});
  EXPECT_EQ(pixel_unshuffle(x, 2).shape(), (Shape{1, 12, 540, 960}));
}

TEST(PixelShuffle, UndividedHeadShape) {
  TensorF x(Shape{1, 48, 540, 960});
  EXPECT_EQ(pixel_shuffle(x, 4).shape(), (Shape{1, 3, 2160, 3840}));
}

TEST(PixelShuffle, FactorOneIsIdentity) {
  Rng rng(2);
  TensorD x = random_tensor(rng, Shape{2, 3, 4, 5});
  EXPECT_EQ(pixel_unshuffle(x, 1), x);
  EXPECT_EQ(pixel_shuffle(x, 1), x);
  EXPECT_EQ(repeat_upscale(x, 1), x);
}

TEST(PixelShuffle, Errors) {
  EXPECT_THROW(pixel_unshuffle(TensorD(Shape{1, 1, 3, 4}), 2), ShapeError);
  EXPECT_THROW(pixel_shuffle(TensorD(Shape{1, 3, 2, 2}), 2), ShapeError);
}

TEST(PixelShuffle, InversePairsAndPermutation) {
  Rng rng(3);
  for (std::size_t r = 1; r <= 4; ++r) {
    for (int t = 0; t < 5; ++t) {
      TensorD x = random_tensor(rng, Shape{1 + rng.index(2), 1 + rng.index(3), r * (1 + rng.index(3)),
                                           r * (1 + rng.index(3))});
      TensorD u = pixel_unshuffle(x, r);
      EXPECT_EQ(pixel_shuffle(u, r), x);
      TensorD s = pixel_shuffle(u, r);
      EXPECT_EQ(pixel_unshuffle(s, r), u);
      std::vector<double> a = x.storage(), b = u.storage();
      std::sort(a.begin(), a.end());
      std::sort(b.begin(), b.end());
      EXPECT_EQ(a, b);
    }
  }
}

TEST(PixelShuffle, GradientsAreInversePermutations) {
  Rng rng(4);
  TensorD x = random_tensor(rng, Shape{1, 2, 4, 6});
  TensorD go = random_tensor(rng, Shape{1, 8, 2, 3});
  TensorD gx = pixel_unshuffle_backward(go, 2);
  EXPECT_EQ(gx, pixel_shuffle(go, 2));
  EXPECT_LT(finite_difference_error(x, gx, [&] { return sum_product(go, pixel_unshuffle(x, 2)); }), 1e-6);
  TensorD y = random_tensor(rng, Shape{1, 8, 2, 3});
  TensorD go2 = random_tensor(rng, Shape{1, 2, 4, 6});
  TensorD gy = pixel_shuffle_backward(go2, 2);
  EXPECT_LT(finite_difference_error(y, gy, [&] { return sum_product(go2, pixel_shuffle(y, 2)); }), 1e-6);
}

TEST(RepeatUpscale, SinglePixelBecomesBlock) {
  TensorD x(Shape{1, 3, 1, 1}, {0.1, 0.2, 0.3});
  TensorD rep = repeat_upscale(x, 2);
  EXPECT_EQ(rep.shape(), (Shape{1, 12, 1, 1}));
  TensorD up = pixel_shuffle(rep, 2);
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t i = 0; i < 2; ++i)
      for (std::size_t j = 0; j < 2; ++j) EXPECT_EQ(up.at(0, c, i, j), x[c]);
}

TEST(RepeatUpscale, EqualsNearestNeighbourOracle) {
  Rng rng(5);
  for (std::size_t r = 1; r <= 4; ++r) {
    TensorD x = random_tensor(rng, Shape{1, 3, 4, 4});
    EXPECT_EQ(pixel_shuffle(repeat_upscale(x, r), r), testing::nearest_upsample(x, r));
  }
}

TEST(RepeatUpscale, GradientSumsReplicas) {
  Rng rng(6);
  TensorD x = random_tensor(rng, Shape{2, 3, 3, 2});
  TensorD go = random_tensor(rng, Shape{2, 12, 3, 2});
  TensorD gx = repeat_upscale_backward(go, 2);
  EXPECT_LT(finite_difference_error(x, gx, [&] { return sum_product(go, repeat_upscale(x, 2)); }), 1e-6);
}

TEST(ParamStore, UniqueNamesAndOrder) {
  ParamStore<double> store;
  store.add("b", Shape{2}, ParamKind::Bias);
  store.add("a", Shape{3}, ParamKind::Bias);
  EXPECT_THROW(store.add("a", Shape{1}, ParamKind::Bias), ValueError);
  ASSERT_EQ(store.size(), 2u);
  EXPECT_EQ(store.entries()[0].name, "b");
  EXPECT_EQ(store.entries()[1].name, "a");
  EXPECT_EQ(store.scalar_count(), 5u);
  EXPECT_EQ(store.value("a").shape(), store.grad("a").shape());
  EXPECT_THROW(store.get("missing"), ValueError);
}

TEST(ConvLayer, SameResolutionAndBiasFlag) {
  ParamStore<double> store;
  ConvLayer layer{"c", 2, 3, 3, false};
  layer.register_params(store);
  EXPECT_FALSE(store.contains("c.bias"));
  Rng rng(7);
  init_params(store, InitScheme::HeNormal, rng);
  TensorD x = random_tensor(rng, Shape{1, 2, 5, 7});
  TensorD y = layer.forward(store, x);
  EXPECT_EQ(y.shape(), (Shape{1, 3, 5, 7}));
  // A bias value sitting in another store cannot leak into a bias-free layer.
  ParamStore<double> other = store;
  other.add("c.bias", Shape{3}, ParamKind::Bias).value.fill(5.0);
  EXPECT_EQ(layer.forward(other, x), y);
}

TEST(ConvLayer, UnregisteredNameThrows) {
  ParamStore<double> store;
  ConvLayer layer{"missing", 1, 1, 3, false};
  EXPECT_THROW(layer.forward(store, TensorD(Shape{1, 1, 3, 3})), ValueError);
}

TEST(ConvLayer, BackwardAccumulates) {
  ParamStore<double> store;
  ConvLayer layer{"c", 2, 2, 3, true};
  layer.register_params(store);
  Rng rng(8);
  init_params(store, InitScheme::HeNormal, rng);
  TensorD x = random_tensor(rng, Shape{2, 2, 4, 4});
  TensorD go = random_tensor(rng, Shape{2, 2, 4, 4});
  layer.backward(store, x, go);
  const TensorD once_w = store.grad("c.weight");
  const TensorD once_b = store.grad("c.bias");
  layer.backward(store, x, go);
  for (std::size_t i = 0; i < once_w.numel(); ++i) EXPECT_EQ(store.grad("c.weight")[i], 2 * once_w[i]);
  for (std::size_t i = 0; i < once_b.numel(); ++i) EXPECT_EQ(store.grad("c.bias")[i], 2 * once_b[i]);
}

TEST(InitParams, HeNormalReproducibleAndScaled) {
  auto make = [](std::uint64_t seed) {
    ParamStore<double> store;
    ConvLayer{"c", 16, 32, 3, true}.register_params(store);
    Rng rng(seed);
    init_params(store, InitScheme::HeNormal, rng);
    return store;
  };
  auto a = make(3), b = make(3);
  EXPECT_EQ(a.value("c.weight"), b.value("c.weight"));
  for (double v : a.value("c.bias").data()) EXPECT_EQ(v, 0.0);
  const TensorD& w = a.value("c.weight");
  double s2 = 0;
  for (double v : w.data()) s2 += v * v;
  const double var = s2 / static_cast<double>(w.numel());
  EXPECT_NEAR(var, 2.0 / (16 * 9), 0.15 * 2.0 / (16 * 9));
}

TEST(InitParams, ResidualEquivalentOnZeroBaseIsIdentity) {
  ParamStore<double> store;
  ConvLayer layer{"c", 2, 2, 3, false};
  layer.register_params(store);
  InitReport report = apply_identity_taps(store);
  EXPECT_TRUE(report.notices.empty());
  Rng rng(9);
  TensorD x = random_tensor(rng, Shape{2, 2, 5, 6});
  EXPECT_EQ(layer.forward(store, x), x);
}

TEST(InitParams, ResidualEquivalentOnlyTouchesCentreDiagonal) {
  auto make = [](InitScheme scheme, InitReport* report) {
    ParamStore<double> store;
    ConvLayer{"square", 4, 4, 3, false}.register_params(store);
    ConvLayer{"wide", 4, 6, 3, false}.register_params(store);
    Rng rng(10);
    InitReport r = init_params(store, scheme, rng);
    if (report) *report = r;
    return store;
  };
  auto he = make(InitScheme::HeNormal, nullptr);
  InitReport report;
  auto res = make(InitScheme::ResidualEquivalent, &report);
  const TensorD& a = he.value("square.weight");
  const TensorD& b = res.value("square.weight");
  for (std::size_t o = 0; o < 4; ++o)
    for (std::size_t i = 0; i < 4; ++i)
      for (std::size_t y = 0; y < 3; ++y)
        for (std::size_t x = 0; x < 3; ++x) {
          const std::size_t k = ((o * 4 + i) * 3 + y) * 3 + x;
          if (o == i && y == 1 && x == 1) {
            EXPECT_EQ(b[k], a[k] + 1.0);
          } else {
            EXPECT_EQ(b[k], a[k]);
          }
        }
  EXPECT_EQ(he.value("wide.weight"), res.value("wide.weight"));
  ASSERT_EQ(report.notices.size(), 1u);
  EXPECT_NE(report.notices[0].find("wide.weight"), std::string::npos);
}

}  // namespace
}  // namespace asconv
