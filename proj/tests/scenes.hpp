#pragma once
// Planted-model scenes shared by the unit tests and the acceptance run.

#include <random>

#include "attnguide/attnguide.hpp"

namespace scenes {

using namespace attnguide;

inline ModelConfig planted_config() { return ModelConfig{}; }

inline std::vector<std::size_t> left_half(const ModelConfig& c) { return patch_rect(c, 0, c.grid(), 0, c.grid() / 2); }
inline std::vector<std::size_t> right_half(const ModelConfig& c) {
  return patch_rect(c, 0, c.grid(), c.grid() / 2, c.grid());
}

inline ModelWeights<double> planted(std::uint64_t seed) {
  const auto c = planted_config();
  return plant_model<double>(c, column_bands(c), seed);
}

// Two object levels drawn per seed.
inline std::pair<double, double> levels(std::uint64_t seed) {
  std::mt19937_64 gen(1000 + seed);
  std::uniform_real_distribution<double> u(0, 1);
  const double la = 0.75 + 0.2 * u(gen);
  return {la, 0.75 + 0.2 * u(gen)};
}

// Object of class 0 at cols 0-1 and of class 1 at cols 6-7, rows 2-5.
inline SynthScene composite_scene(std::uint64_t seed, double background = 0.0) {
  const auto c = planted_config();
  const auto [la, lb] = levels(seed);
  SynthScene s;
  s.background = background;
  s.fill(patch_rect(c, 2, 6, 0, 2), la);
  s.fill(patch_rect(c, 2, 6, 6, 8), lb);
  return s;
}

// One object filling rows 2-5 of class `cls`'s half.
inline SynthScene single_scene(std::size_t cls, double level, double background = 0.0) {
  const auto c = planted_config();
  SynthScene s;
  s.background = background;
  s.fill(cls == 0 ? patch_rect(c, 2, 6, 0, 4) : patch_rect(c, 2, 6, 4, 8), level);
  return s;
}

}  // namespace scenes
