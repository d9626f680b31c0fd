#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <random>
#include <set>
#include <vector>

#include "json.hpp"

#include "attnguide/vit.hpp"

namespace attnguide {

/// Knobs of the planted construction. Defaults are the calibrated values the
/// test-suite relies on.
struct PlantParams {
  double ballast = 20.0;        // +-K carried by two coordinates to keep LayerNorm near-affine
  double gate_slope = 2.0;      // s: intensity slope of the region gate
  double gate_offset = 10.0;    // M: indicator weight that opens the gate inside a region
  double head_gain = 0.4;       // g: classifier gain on the evidence coordinates
  double value_bias = 5.0;      // beta_v: value bias of the evidence heads, cancelled on cls
  double qk_scale = 0.1;        // std of the small random query/key weights
  double pixel_contrast = 0.5;  // kappa: zero-sum per-pixel pattern on the intensity read-out
  double anchor = 1.5;          // fixed cls coordinate nothing reads
  double value_noise = 0.1;     // std of the unused value/output directions
  double head_bias = 0.0;

  friend bool operator==(const PlantParams&, const PlantParams&) = default;
};

inline void to_json(nlohmann::json& j, const PlantParams& p) {
  j = {{"ballast", p.ballast},         {"gate_slope", p.gate_slope}, {"gate_offset", p.gate_offset},
       {"head_gain", p.head_gain},     {"value_bias", p.value_bias}, {"qk_scale", p.qk_scale},
       {"pixel_contrast", p.pixel_contrast}, {"anchor", p.anchor}, {"value_noise", p.value_noise},
       {"head_bias", p.head_bias}};
}

inline void from_json(const nlohmann::json& j, PlantParams& p) {
  PlantParams d;
  p.ballast = j.value("ballast", d.ballast);
  p.gate_slope = j.value("gate_slope", d.gate_slope);
  p.gate_offset = j.value("gate_offset", d.gate_offset);
  p.head_gain = j.value("head_gain", d.head_gain);
  p.value_bias = j.value("value_bias", d.value_bias);
  p.qk_scale = j.value("qk_scale", d.qk_scale);
  p.pixel_contrast = j.value("pixel_contrast", d.pixel_contrast);
  p.anchor = j.value("anchor", d.anchor);
  p.value_noise = j.value("value_noise", d.value_noise);
  p.head_bias = j.value("head_bias", d.head_bias);
}

using ClassRegions = std::map<std::size_t, std::vector<std::size_t>>;

/// Left/right (or column-band) split of the patch grid, one band per class.
inline ClassRegions column_bands(const ModelConfig& cfg) {
  ClassRegions r;
  const std::size_t g = cfg.grid(), n = cfg.num_classes;
  if (g < n) throw PreconditionError("grid narrower than the number of classes");
  for (std::size_t row = 0; row < g; ++row)
    for (std::size_t col = 0; col < g; ++col) {
      const std::size_t c = col * n / g;
      r[c].push_back(row * g + col);
    }
  return r;
}

/// Builds weights whose logit for class c grows with the brightness of class
/// c's patch region (raw pixel 0 is "off", brighter is more evidence).
///
/// Residual coordinates: 0 patch intensity u, 1/2 ballast +-K, 3 "one" on
/// patch tokens, 4 a coordinate held at zero, then one region indicator and
/// one evidence coordinate per class, then an anchor and free coordinates.
/// Block 0's MLP turns intensity inside region c into evidence r_c through an
/// even gate (zero value and slope on black); the last block's heads copy
/// r_c into the cls token; the head reads r with centred weights.
template <std::floating_point Real>
ModelWeights<Real> plant_model(const ModelConfig& cfg, const ClassRegions& regions, std::uint64_t seed,
                               const PlantParams& p = {}) {
  cfg.validate();
  const std::size_t C = cfg.num_classes, D = cfg.embed_dim, H = cfg.num_heads, dh = cfg.head_dim();
  const std::size_t N = cfg.num_patches(), P = cfg.patch_dim();
  if (D < 6 + 2 * C) throw PreconditionError("embed_dim too small for a planted model: need >= " + std::to_string(6 + 2 * C));
  if (dh < C) throw PreconditionError("head_dim must be >= num_classes for a planted model");
  if (cfg.hidden_dim() < 2 * C) throw PreconditionError("MLP too narrow for a planted model");
  if (P % 2) throw PreconditionError("patch_dim must be even for a planted model");
  if (regions.size() != C) throw PreconditionError("need exactly one region per class");
  std::set<std::size_t> seen;
  for (const auto& [c, reg] : regions) {
    if (c >= C) throw PreconditionError("region for class " + std::to_string(c) + " out of range");
    if (reg.empty()) throw PreconditionError("region for class " + std::to_string(c) + " is empty");
    for (auto idx : reg) {
      if (idx >= N) throw PreconditionError("patch index " + std::to_string(idx) + " outside the grid");
      if (!seen.insert(idx).second) throw PreconditionError("class regions overlap at patch " + std::to_string(idx));
    }
  }

  constexpr std::size_t iu = 0, ibp = 1, ibm = 2, ione = 3, iz = 4;
  auto ind = [&](std::size_t c) { return 5 + c; };
  auto rr = [&](std::size_t c) { return 5 + C + c; };
  const std::size_t ianchor = 5 + 2 * C;
  std::vector<std::size_t> free;
  for (std::size_t i = ianchor + 1; i < D; ++i) free.push_back(i);

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  auto rn = [&] { return normal(rng); };
  auto f32 = [](double x) { return Real(static_cast<float>(x)); };

  auto w = ModelWeights<Real>::zeros(cfg);
  const double K = p.ballast, s = p.gate_slope, M = p.gate_offset;

  std::vector<double> zeta(P);
  for (std::size_t i = 0; i < P; ++i) zeta[i] = i % 2 ? -1.0 : 1.0;
  std::shuffle(zeta.begin(), zeta.end(), rng);
  for (std::size_t i = 0; i < P; ++i) w.patch_w(i, iu) = f32(1.0 / double(P) + p.pixel_contrast * zeta[i]);
  w.patch_b[ione] = 1;

  w.cls_token[ianchor] = f32(p.anchor);
  for (std::size_t c = 0; c < C; ++c) w.cls_token[rr(c)] = f32(-p.value_bias);
  for (std::size_t t = 0; t < cfg.tokens(); ++t) {
    w.pos_embed(t, ibp) = f32(K);
    w.pos_embed(t, ibm) = f32(-K);
  }
  for (const auto& [c, reg] : regions)
    for (auto idx : reg) w.pos_embed(1 + idx, ind(c)) = 1;

  const Real ln_gain = f32(K * std::sqrt(2.0 / double(D)));
  std::vector<std::size_t> qk_src{iu};
  qk_src.insert(qk_src.end(), free.begin(), free.end());

  for (std::size_t l = 0; l < cfg.num_layers; ++l) {
    auto& b = w.blocks[l];
    b.ln1_gamma = Tensor<Real>({D}, ln_gain);
    b.ln2_gamma = Tensor<Real>({D}, ln_gain);
    for (std::size_t j = 0; j < D; ++j)
      for (auto i : qk_src) {
        b.wq(i, j) = f32(p.qk_scale * rn());
        b.wk(i, j) = f32(p.qk_scale * rn());
      }
    if (l == 0) {
      for (std::size_t j = 0; j < D; ++j) b.wv(iu, j) = f32(0.1 * rn());
      for (std::size_t j = 0; j < D; ++j)
        for (auto f : free) b.wo(j, f) = f32(0.1 * rn());
      for (std::size_t c = 0; c < C; ++c) {
        b.w1(iu, c) = f32(s);
        b.w1(ione, c) = f32(s - M);
        b.w1(ind(c), c) = f32(M);
        b.w1(iz, c) = f32(-2 * s);
        b.w2(c, rr(c)) = 1;
        const std::size_t k = C + c;
        b.w1(iu, k) = f32(-s);
        b.w1(ione, k) = f32(-s - M);
        b.w1(ind(c), k) = f32(M);
        b.w1(iz, k) = f32(2 * s);
        b.w2(k, rr(c)) = 1;
      }
    }
    if (l + 1 == cfg.num_layers) {
      std::vector<std::size_t> vsrc = free;
      vsrc.push_back(iu);
      for (std::size_t h = 0; h < H; ++h) {
        const std::size_t base = h * dh;
        for (std::size_t c = 0; c < C; ++c) {
          b.wv(rr(c), base + c) = 1;
          b.wv(iz, base + c) = -1;
          b.bv[base + c] = f32(p.value_bias);
          b.wo(base + c, rr(c)) = f32(1.0 / double(H));
        }
        for (std::size_t j = base + C; j < base + dh; ++j) {
          for (auto i : vsrc) b.wv(i, j) = f32(p.value_noise * rn());
          for (auto f : free) b.wo(j, f) = f32(p.value_noise * rn());
        }
      }
      b.b2[ibp] = f32(-K);
      b.b2[ibm] = f32(K);
    }
  }
  for (std::size_t c = 0; c < C; ++c) {
    for (std::size_t r = 0; r < C; ++r)
      w.head_w(rr(r), c) = f32(p.head_gain * ((c == r ? 1.0 : 0.0) - 1.0 / double(C)));
    w.head_b[c] = f32(p.head_bias);
  }
  return w;
}

}  // namespace attnguide
