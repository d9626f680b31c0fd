#include <gtest/gtest.h>

#include <random>
#include <set>

#include "attnguide/attnguide.hpp"
#include "scenes.hpp"

using namespace attnguide;
using T = Tensor<double>;

namespace {

T randn(Shape s, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n;
  T t(std::move(s));
  for (auto& v : t.storage()) v = n(rng);
  return t;
}

T rand_attention(std::size_t H, std::size_t n, std::uint64_t seed) {
  T a = randn({H, n, n}, seed);
  for (std::size_t h = 0; h < H; ++h)
    for (std::size_t i = 0; i < n; ++i) {
      double z = 0;
      for (std::size_t j = 0; j < n; ++j) z += (a(h, i, j) = std::exp(a(h, i, j)));
      for (std::size_t j = 0; j < n; ++j) a(h, i, j) /= z;
    }
  return a;
}

ModelConfig tiny() {
  ModelConfig c;
  c.image_size = 16;
  c.patch_size = 4;
  c.embed_dim = 16;
  c.num_classes = 4;
  return c;
}

}  // namespace

TEST(Correct, ZeroGradientGivesIdentity) {
  const T a = rand_attention(2, 5, 1);
  for (auto s : {Scheme::positive, Scheme::complete, Scheme::absolute})
    EXPECT_EQ(correct_layer(a, T({2, 5, 5}), s), T::identity(5));
}

TEST(Correct, HandExample) {
  const T a({1, 2, 2}, {.7, .3, .4, .6});
  const T g({1, 2, 2}, {1, -1, -1, 1});
  auto expect = [](const T& got, std::vector<double> off) {
    const T want = T({2, 2}, {1 + off[0], off[1], off[2], 1 + off[3]});
    EXPECT_LT(max_abs_diff(got, want), 1e-15);
  };
  expect(correct_layer(a, g, Scheme::complete), {.7, -.3, -.4, .6});
  expect(correct_layer(a, g, Scheme::positive), {.7, 0, 0, .6});
  expect(correct_layer(a, g, Scheme::absolute), {.7, .3, .4, .6});
}

TEST(Correct, HeadsAreAveraged) {
  const T a({2, 1, 1}, {1, 1});
  const T g({2, 1, 1}, {2, -4});
  EXPECT_DOUBLE_EQ(correct_layer(a, g, Scheme::complete)[0], 1 + (2 - 4) / 2.0);
  EXPECT_DOUBLE_EQ(correct_layer(a, g, Scheme::positive)[0], 1 + 2 / 2.0);
  EXPECT_DOUBLE_EQ(correct_layer(a, g, Scheme::absolute)[0], 1 + 6 / 2.0);
}

TEST(Correct, PositiveAndAbsoluteStayAboveIdentity) {
  for (std::uint64_t s = 0; s < 20; ++s) {
    const T a = rand_attention(3, 6, s), g = randn({3, 6, 6}, 100 + s);
    for (auto sch : {Scheme::positive, Scheme::absolute}) {
      const T m = correct_layer(a, g, sch);
      for (std::size_t i = 0; i < 6; ++i)
        for (std::size_t j = 0; j < 6; ++j) EXPECT_GE(m(i, j), (i == j ? 1.0 : 0.0) - 1e-12);
    }
  }
}

TEST(Correct, SingleHeadIdentities) {
  for (std::uint64_t s = 0; s < 20; ++s) {
    const T a = rand_attention(1, 7, s), g = randn({1, 7, 7}, 200 + s);
    const T comp = correct_layer(a, g, Scheme::complete);
    const T pos = correct_layer(a, g, Scheme::positive), abs = correct_layer(a, g, Scheme::absolute);
    for (std::size_t i = 0; i < 7; ++i)
      for (std::size_t j = 0; j < 7; ++j) {
        const double id = i == j ? 1.0 : 0.0;
        EXPECT_NEAR(pos(i, j), id + std::max(0.0, comp(i, j) - id), 1e-12);
        EXPECT_NEAR(abs(i, j), id + std::abs(comp(i, j) - id), 1e-12);
      }
  }
}

TEST(Correct, ShapeMismatchThrows) {
  EXPECT_THROW(correct_layer(T({1, 3, 3}), T({1, 2, 2}), Scheme::complete), ShapeError);
}

TEST(Rollout, SingleLayerUnchanged) {
  const T m = randn({1, 4, 4}, 3);
  EXPECT_EQ(rollout(m), m.slice(0));
}

TEST(Rollout, IdentityChain) {
  EXPECT_EQ(rollout(stack(std::vector<T>(4, T::identity(5)))), T::identity(5));
}

TEST(Rollout, LastLayerLeftmost) {
  const T m = randn({3, 4, 4}, 4);
  const T want = matmul(m.slice(2), matmul(m.slice(1), m.slice(0)));
  EXPECT_LT(max_abs_diff(rollout(m), want), 1e-12);
}

TEST(Saliency, IdentityRowGivesZeros) {
  const auto s = cls_saliency(T::identity(5), 2, 2);
  EXPECT_EQ(s.scores, std::vector<double>(4, 0.0));
}

TEST(Saliency, RowZeroSlicing) {
  T r({4, 4});
  r(0, 0) = 5;
  r(0, 1) = 1;
  r(0, 2) = -2;
  r(0, 3) = 3;
  EXPECT_EQ(cls_saliency(r, 1, 3).scores, (std::vector<double>{1, -2, 3}));
  EXPECT_THROW(cls_saliency(r, 2, 2), ShapeError);
}

TEST(Saliency, Normalize) {
  SaliencyMap<double> s;
  s.scores = {2, -4, 1};
  auto n = normalize_signed(s);
  EXPECT_EQ(n.normalized, (std::vector<double>{0.5, -1, 0.25}));
  EXPECT_FALSE(n.degenerate);
  s.scores = {0, 0, 0};
  n = normalize_signed(s);
  EXPECT_EQ(n.normalized, (std::vector<double>{0, 0, 0}));
  EXPECT_TRUE(n.degenerate);
}

TEST(Saliency, NormalizeKeepsExtremaAndUnitPeak) {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> n;
  for (int k = 0; k < 20; ++k) {
    SaliencyMap<double> s;
    for (int i = 0; i < 9; ++i) s.scores.push_back(n(rng));
    const auto out = normalize_signed(s);
    auto amax = [](const std::vector<double>& v) { return std::max_element(v.begin(), v.end()) - v.begin(); };
    auto amin = [](const std::vector<double>& v) { return std::min_element(v.begin(), v.end()) - v.begin(); };
    EXPECT_EQ(amax(out.normalized), amax(s.scores));
    EXPECT_EQ(amin(out.normalized), amin(s.scores));
    double peak = 0;
    for (double v : out.normalized) peak = std::max(peak, std::abs(v));
    EXPECT_DOUBLE_EQ(peak, 1.0);
  }
}

TEST(Interpret, ZeroGradientPipelineGivesZeroScores) {
  // one layer, uniform attention, zero gradient
  const std::size_t T_ = 5;
  const T a = T({1, 1, T_, T_}, 1.0 / T_);
  ModelConfig c;
  c.image_size = 8;
  c.patch_size = 4;
  const auto s = saliency_from(c, a, T({1, 1, T_, T_}), Scheme::complete);
  EXPECT_EQ(s.scores, std::vector<double>(4, 0.0));
  EXPECT_TRUE(s.degenerate);
}

TEST(Interpret, ZeroHeadModelIsDegenerate) {
  const auto c = tiny();
  auto w = random_weights<double>(c, 6);
  w.head_w = T(w.head_w.shape());
  std::mt19937_64 rng(7);
  T x({16, 16, 3});
  for (auto& v : x.storage()) v = double(rng() % 100) / 50 - 1;
  for (auto sch : {Scheme::positive, Scheme::complete, Scheme::absolute}) {
    const auto s = interpret(w, x, LossSpec::single(1), sch);
    EXPECT_TRUE(s.degenerate);
    for (double v : s.normalized) EXPECT_EQ(v, 0.0);
  }
}

TEST(Interpret, SingleLayerLossScaleInvariance) {
  auto c = tiny();
  c.num_layers = 1;
  const auto w = random_weights<double>(c, 8);
  T x({16, 16, 3}, 0.3);
  x(3, 5, 1) = -0.8;
  const auto g = attention_gradients(w, x, LossSpec::single(2));
  T scaled = g.grads;
  for (auto& v : scaled.storage()) v *= 3.7;
  for (auto sch : {Scheme::positive, Scheme::complete, Scheme::absolute}) {
    const auto a = saliency_from(c, g.attention, g.grads, sch), b = saliency_from(c, g.attention, scaled, sch);
    for (std::size_t i = 0; i < a.normalized.size(); ++i) EXPECT_NEAR(a.normalized[i], b.normalized[i], 1e-12);
  }
}

TEST(Interpret, SignedAllocationOnPlantedComposite) {
  const auto c = scenes::planted_config();
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto s = interpret(scenes::planted(seed), synth_model<double>(c, scenes::composite_scene(seed), seed),
                             LossSpec::single(0), Scheme::complete);
    const double a = region_mean(s, scenes::left_half(c)), b = region_mean(s, scenes::right_half(c));
    EXPECT_GT(a, 0);
    EXPECT_GT(a, b);
  }
}

TEST(Interpret, JsonCarriesGrid) {
  SaliencyMap<double> s;
  s.scores = {1, -1, 0, 0.5};
  s = normalize_signed(s);
  s.rows = s.cols = 2;
  s.scheme = "complete";
  const auto j = to_json(s);
  EXPECT_EQ(j["grid"], nlohmann::json({2, 2}));
  EXPECT_EQ(j["normalized"].size(), 4u);
  EXPECT_EQ(j["scheme"], "complete");
}

TEST(Scheme, Parse) {
  EXPECT_EQ(parse_scheme("positive"), Scheme::positive);
  EXPECT_EQ(parse_scheme("absolute"), Scheme::absolute);
  EXPECT_THROW(parse_scheme("signed"), Error);
}

// ---- guidance ----

TEST(Composite, PaperGeometry) {
  ModelConfig c;
  c.image_size = 224;
  c.patch_size = 16;
  c.embed_dim = 32;
  const auto comp = composite_guide(T({224, 224, 3}), T({224, 224, 3}), CompositeLayout{}, c);
  std::set<std::size_t> cols;
  for (auto p : comp.guide) cols.insert(p % 14);
  EXPECT_EQ(cols, (std::set<std::size_t>{7, 8, 9, 10, 11, 12, 13}));
  EXPECT_EQ(comp.guide.size(), 7u * 14u);
}

TEST(Composite, MasksPartitionGrid) {
  ModelConfig c;
  for (double f : {0.3, 0.5, 0.61}) {
    for (auto pl : {Placement::right, Placement::bottom}) {
      const auto comp = composite_guide(T({40, 40, 3}), T({20, 30, 3}), CompositeLayout{pl, f}, c);
      EXPECT_EQ(comp.image.shape(), (Shape{32, 32, 3}));
      std::set<std::size_t> src(comp.source.begin(), comp.source.end()), gd(comp.guide.begin(), comp.guide.end());
      for (auto p : src) EXPECT_FALSE(gd.count(p));
      // anything in neither mask straddles the seam
      for (std::size_t p = 0; p < c.num_patches(); ++p) {
        if (src.count(p) || gd.count(p)) continue;
        const std::size_t k = pl == Placement::right ? p % c.grid() : p / c.grid();
        EXPECT_LT(k * c.patch_size, comp.split_px);
        EXPECT_GT((k + 1) * c.patch_size, comp.split_px);
      }
    }
  }
}

TEST(Composite, SelfCompositeIsResizedSelf) {
  ModelConfig c;
  T x({32, 32, 3});
  std::mt19937_64 rng(9);
  for (auto& v : x.storage()) v = double(rng() % 1000) / 500 - 1;
  const auto comp = composite_guide(x, x, CompositeLayout{}, c);
  const T half = resize_bilinear(x, 32, 16);
  for (std::size_t y = 0; y < 32; ++y)
    for (std::size_t xx = 0; xx < 16; ++xx)
      for (std::size_t ch = 0; ch < 3; ++ch) {
        EXPECT_EQ(comp.image(y, xx, ch), half(y, xx, ch));
        EXPECT_EQ(comp.image(y, xx + 16, ch), half(y, xx, ch));
      }
}

TEST(Composite, Preconditions) {
  ModelConfig c;
  EXPECT_THROW(composite_guide(T({32, 32, 3}), T({32, 32, 3}), CompositeLayout{Placement::right, 0.0}, c),
               PreconditionError);
  EXPECT_THROW(composite_guide(T({32, 32, 3}), T({32, 32, 3}), CompositeLayout{Placement::right, 0.05}, c),
               PreconditionError);
  EXPECT_THROW(composite_guide(T({32, 32, 1}), T({32, 32, 3}), CompositeLayout{}, c), ShapeError);
  EXPECT_EQ(parse_placement("bottom"), Placement::bottom);
  EXPECT_THROW(parse_placement("left"), Error);
}

TEST(Composite, GuidedPlantedSaliencySplitsBySign) {
  const auto c = scenes::planted_config();
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto [la, lb] = scenes::levels(seed);
    const auto comp = composite_guide(synth_model<double>(c, scenes::single_scene(0, la), seed),
                                      synth_model<double>(c, scenes::single_scene(1, lb), seed + 100), CompositeLayout{}, c);
    const auto s = interpret(scenes::planted(seed), comp.image, LossSpec::single(0), Scheme::complete);
    EXPECT_GT(region_mean(s, comp.source), 0) << seed;
    EXPECT_LT(region_mean(s, comp.guide), 0) << seed;
  }
}

// ---- detail interpretation ----

TEST(Detail, SameClassRejected) {
  const auto c = tiny();
  EXPECT_THROW(detail_interpret(random_weights<double>(c, 1), T({16, 16, 3}), 2, 2, LossSpec::Kind::normalized_diff,
                                Scheme::complete),
               PreconditionError);
}

TEST(Detail, SwappedDiffNegatesCorrectionTerms) {
  const auto c = tiny();
  const auto w = random_weights<double>(c, 10);
  T x({16, 16, 3}, -0.2);
  x(7, 7, 0) = 0.9;
  const auto ab = attention_gradients(w, x, LossSpec::difference(0, 3));
  const auto ba = attention_gradients(w, x, LossSpec::difference(3, 0));
  for (std::size_t i = 0; i < ab.grads.size(); ++i) EXPECT_EQ(ab.grads[i], -ba.grads[i]);
  const T m1 = correct_stack(ab.attention, ab.grads, Scheme::complete);
  const T m2 = correct_stack(ba.attention, ba.grads, Scheme::complete);
  for (std::size_t l = 0; l < c.num_layers; ++l)
    for (std::size_t i = 0; i < c.tokens(); ++i)
      for (std::size_t j = 0; j < c.tokens(); ++j) {
        const double id = i == j ? 1.0 : 0.0;
        EXPECT_NEAR(m1(l, i, j) - id, -(m2(l, i, j) - id), 1e-15);
      }
}

TEST(Detail, ThreeClassPlantedSubregions) {
  ModelConfig c;
  c.num_classes = 3;
  const ClassRegions reg{{0, patch_rect(c, 0, 8, 0, 2)}, {1, patch_rect(c, 0, 8, 2, 4)}, {2, patch_rect(c, 0, 8, 4, 8)}};
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto w = plant_model<double>(c, reg, seed);
    SynthScene sc;
    sc.fill(patch_rect(c, 2, 6, 0, 4), scenes::levels(seed).first);
    const auto s = detail_interpret(w, synth_model<double>(c, sc, seed), 0, 1, LossSpec::Kind::normalized_diff,
                                    Scheme::complete);
    EXPECT_GT(region_mean(s, reg.at(0)), 0) << seed;
    EXPECT_LT(region_mean(s, reg.at(1)), 0) << seed;
  }
}
