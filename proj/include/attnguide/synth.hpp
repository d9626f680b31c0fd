#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <random>
#include <vector>

#include "attnguide/config.hpp"
#include "attnguide/tensor.hpp"

namespace attnguide {

/// Patch indices of the grid rectangle rows [r0,r1) x cols [c0,c1).
inline std::vector<std::size_t> patch_rect(const ModelConfig& cfg, std::size_t r0, std::size_t r1, std::size_t c0,
                                           std::size_t c1) {
  const std::size_t g = cfg.grid();
  if (r1 > g || c1 > g || r0 > r1 || c0 > c1) throw PreconditionError("patch rectangle outside the grid");
  std::vector<std::size_t> out;
  for (std::size_t r = r0; r < r1; ++r)
    for (std::size_t c = c0; c < c1; ++c) out.push_back(r * g + c);
  return out;
}

struct SynthScene {
  std::map<std::size_t, double> levels;  // patch -> raw brightness in [0,1]
  double background = 0.0;
  double noise = 0.02;

  void fill(const std::vector<std::size_t>& patches, double level) {
    for (auto p : patches) levels[p] = level;
  }
};

/// Raw [0,1] image [S,S,C]: flat patches on a background plus clamped
/// Gaussian noise.
template <std::floating_point Real>
Tensor<Real> synth_unit(const ModelConfig& cfg, const SynthScene& scene, std::uint64_t seed) {
  const std::size_t S = cfg.image_size, P = cfg.patch_size, g = cfg.grid(), C = cfg.channels;
  Tensor<Real> img({S, S, C}, Real(scene.background));
  for (const auto& [p, lev] : scene.levels) {
    if (p >= g * g) throw PreconditionError("synthetic patch index outside the grid");
    const std::size_t r = p / g, c = p % g;
    for (std::size_t y = r * P; y < (r + 1) * P; ++y)
      for (std::size_t x = c * P; x < (c + 1) * P; ++x)
        for (std::size_t ch = 0; ch < C; ++ch) img(y, x, ch) = Real(lev);
  }
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 1.0);
  for (auto& v : img.storage()) v = std::clamp(Real(double(v) + scene.noise * n(rng)), Real(0), Real(1));
  return img;
}

/// Raw [0,1] to model space with mean 0.5 / std 0.5.
template <std::floating_point Real>
Tensor<Real> unit_to_model(Tensor<Real> t) {
  for (auto& v : t.storage()) v = (v - Real(0.5)) / Real(0.5);
  return t;
}

template <std::floating_point Real>
Tensor<Real> model_to_unit(Tensor<Real> t) {
  for (auto& v : t.storage()) v = v * Real(0.5) + Real(0.5);
  return t;
}

template <std::floating_point Real>
Tensor<Real> synth_model(const ModelConfig& cfg, const SynthScene& scene, std::uint64_t seed) {
  return unit_to_model(synth_unit<Real>(cfg, scene, seed));
}

}  // namespace attnguide
