#include <gtest/gtest.h>

#include <random>

#include "attnguide/attnguide.hpp"
#include "scenes.hpp"

using namespace attnguide;
using T = Tensor<double>;

namespace {

ModelConfig tiny() {
  ModelConfig c;
  c.image_size = 16;
  c.patch_size = 4;
  c.embed_dim = 16;
  c.num_classes = 10;
  return c;
}

T random_image(const ModelConfig& c, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1, 1);
  T x({c.image_size, c.image_size, c.channels});
  for (auto& v : x.storage()) v = u(rng);
  return x;
}

}  // namespace

TEST(Config, DerivedSizes) {
  const ModelConfig c;
  EXPECT_EQ(c.grid(), 8u);
  EXPECT_EQ(c.num_patches(), 64u);
  EXPECT_EQ(c.tokens(), 65u);
  EXPECT_EQ(c.patch_dim(), 48u);
  EXPECT_EQ(c.head_dim(), 16u);
}

TEST(Config, RejectsInvalid) {
  auto bad = [](auto mutate) {
    ModelConfig c;
    mutate(c);
    return c;
  };
  EXPECT_THROW(bad([](ModelConfig& c) { c.image_size = 30; }).validate(), PreconditionError);
  EXPECT_THROW(bad([](ModelConfig& c) { c.num_heads = 3; }).validate(), PreconditionError);
  EXPECT_THROW(bad([](ModelConfig& c) { c.num_layers = 0; }).validate(), PreconditionError);
  EXPECT_THROW(bad([](ModelConfig& c) { c.num_classes = 1; }).validate(), PreconditionError);
  EXPECT_NO_THROW(ModelConfig{}.validate());
}

TEST(Config, JsonRoundTrip) {
  const ModelConfig c = tiny();
  EXPECT_EQ(nlohmann::json(c).get<ModelConfig>(), c);
}

TEST(Forward, AttentionRowsAreDistributions) {
  const auto c = tiny();
  const auto w = random_weights<double>(c, 1);
  for (std::uint64_t s = 0; s < 5; ++s) {
    const auto tr = forward(w, random_image(c, s));
    const T a = tr.attention();
    ASSERT_EQ(a.shape(), (Shape{c.num_layers, c.num_heads, c.tokens(), c.tokens()}));
    EXPECT_EQ(tr.token_count, 1 + (c.image_size / c.patch_size) * (c.image_size / c.patch_size));
    for (std::size_t r = 0; r < a.size() / c.tokens(); ++r) {
      double sum = 0;
      for (std::size_t j = 0; j < c.tokens(); ++j) {
        const double v = a[r * c.tokens() + j];
        EXPECT_GE(v, 0.0);
        EXPECT_LE(v, 1.0);
        sum += v;
      }
      EXPECT_NEAR(sum, 1.0, 1e-6);
    }
  }
}

TEST(Forward, WrongImageShapeThrows) {
  const auto c = tiny();
  EXPECT_THROW(forward(random_weights<double>(c, 1), T({8, 8, 3})), ShapeError);
}

TEST(Forward, PatchPermutationWithPositionsIsInvariant) {
  const auto c = tiny();
  auto w = random_weights<double>(c, 2);
  const T x = random_image(c, 3);
  const std::size_t p = 1, q = 10, g = c.grid(), P = c.patch_size;
  T y = x;
  for (std::size_t dy = 0; dy < P; ++dy)
    for (std::size_t dx = 0; dx < P; ++dx)
      for (std::size_t ch = 0; ch < c.channels; ++ch)
        std::swap(y((p / g) * P + dy, (p % g) * P + dx, ch), y((q / g) * P + dy, (q % g) * P + dx, ch));
  auto w2 = w;
  for (std::size_t d = 0; d < c.embed_dim; ++d) std::swap(w2.pos_embed(1 + p, d), w2.pos_embed(1 + q, d));
  const T a = logits_of(w, x), b = logits_of(w2, y);
  EXPECT_LT(max_abs_diff(a, b), 1e-12);
}

TEST(Forward, OverrideWithOwnAttentionReproducesLogits) {
  const auto c = tiny();
  const auto w = random_weights<double>(c, 4);
  const T x = random_image(c, 5);
  const auto tr = forward(w, x);
  ForwardOptions<double> opt;
  for (std::size_t l = 0; l < c.num_layers; ++l) opt.attention_override.push_back(tr.attention().slice(l));
  EXPECT_LT(max_abs_diff(forward(w, x, opt).logit_values(), tr.logit_values()), 1e-12);
}

TEST(Forward, SoftmaxAndArgmaxHelpers) {
  const T p = softmax(T({3}, {1, 1, 1}));
  for (double v : p.storage()) EXPECT_NEAR(v, 1.0 / 3, 1e-15);
  EXPECT_EQ(argmax(T({3}, {2, 5, 5})), 1u);
}

// ---- planted model ----

TEST(Planted, BrightRegionWins) {
  const auto c = scenes::planted_config();
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto w = scenes::planted(seed);
    EXPECT_EQ(argmax(logits_of(w, synth_model<double>(c, scenes::single_scene(0, 0.8), seed))), 0u);
    EXPECT_EQ(argmax(logits_of(w, synth_model<double>(c, scenes::single_scene(1, 0.8), seed))), 1u);
  }
}

TEST(Planted, BrighteningRegionRaisesItsLogit) {
  const auto c = scenes::planted_config();
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto w = scenes::planted(seed);
    const T base = synth_unit<double>(c, scenes::composite_scene(seed), seed);
    const auto bands = column_bands(c);
    for (std::size_t cls : {0u, 1u}) {
      T up = base;
      for (auto p : bands.at(cls)) {
        const std::size_t r = p / c.grid(), col = p % c.grid(), P = c.patch_size;
        for (std::size_t y = r * P; y < (r + 1) * P; ++y)
          for (std::size_t x = col * P; x < (col + 1) * P; ++x)
            for (std::size_t ch = 0; ch < 3; ++ch) up(y, x, ch) += 0.1;
      }
      EXPECT_GT(logits_of(w, unit_to_model(up))[cls], logits_of(w, unit_to_model(base))[cls]) << seed << " " << cls;
    }
  }
}

TEST(Planted, BlankImagesGiveEqualLogits) {
  const auto c = scenes::planted_config();
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto w = scenes::planted(seed);
    for (double raw : {0.0, 0.5}) {
      const T l = logits_of(w, unit_to_model(T({c.image_size, c.image_size, 3}, raw)));
      EXPECT_NEAR(l[0], l[1], 1e-6) << "seed " << seed << " raw " << raw;
    }
  }
}

TEST(Planted, PixelGradientConcentratesInClassRegion) {
  const auto c = scenes::planted_config();
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto w = scenes::planted(seed);
    const T x = synth_model<double>(c, scenes::single_scene(0, scenes::levels(seed).first), seed);
    const T g = pixel_gradients(w, x, LossSpec::single(0));
    double in = 0, all = 0;
    for (std::size_t y = 0; y < c.image_size; ++y)
      for (std::size_t xx = 0; xx < c.image_size; ++xx)
        for (std::size_t ch = 0; ch < 3; ++ch) {
          all += std::abs(g(y, xx, ch));
          if (xx < c.image_size / 2) in += std::abs(g(y, xx, ch));
        }
    EXPECT_GE(in / all, 0.6) << "seed " << seed;
  }
}

TEST(Planted, DeterministicInSeed) {
  const auto a = scenes::planted(3), b = scenes::planted(3), d = scenes::planted(4);
  EXPECT_EQ(save_weights_bytes(a), save_weights_bytes(b));
  EXPECT_NE(save_weights_bytes(a), save_weights_bytes(d));
}

TEST(Planted, RejectsBadRegions) {
  const auto c = scenes::planted_config();
  ClassRegions overlap{{0, {0, 1, 2}}, {1, {2, 3}}};
  EXPECT_THROW(plant_model<double>(c, overlap, 0), PreconditionError);
  ClassRegions outside{{0, {0}}, {1, {999}}};
  EXPECT_THROW(plant_model<double>(c, outside, 0), PreconditionError);
  ClassRegions missing{{0, {0}}};
  EXPECT_THROW(plant_model<double>(c, missing, 0), PreconditionError);
}
