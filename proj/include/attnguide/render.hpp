#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>

#include "attnguide/image.hpp"
#include "attnguide/preprocess.hpp"
#include "attnguide/rollout.hpp"

namespace attnguide {

enum class Upsample { nearest, bilinear };

struct RenderSpec {
  double alpha = 0.5;  // weight of the base image over the heatmap
  Upsample upsample = Upsample::nearest;
  bool color_bar = true;
};

inline std::uint8_t round_half_up(double v) {
  return static_cast<std::uint8_t>(std::clamp(std::floor(v + 0.5), 0.0, 255.0));
}

/// Blue (-1) through white (0) to red (+1), linear in between.
inline std::array<std::uint8_t, 3> diverging_color(double v) {
  v = std::clamp(v, -1.0, 1.0);
  if (v >= 0) {
    const auto k = round_half_up(255.0 * (1.0 - v));
    return {255, k, k};
  }
  const auto k = round_half_up(255.0 * (1.0 + v));
  return {k, k, 255};
}

inline std::size_t color_bar_height(std::size_t h) { return std::max<std::size_t>(4, h / 8); }

/// Heatmap of the normalized map under `base` (base weighted by alpha), with
/// a -1..+1 colour bar strip appended at the bottom.
template <std::floating_point Real>
RawImage render_heatmap(const SaliencyMap<Real>& s, const RawImage& base, const RenderSpec& spec = {}) {
  if (!(spec.alpha >= 0 && spec.alpha <= 1)) throw PreconditionError("alpha must lie in [0,1]");
  if (s.normalized.size() != s.rows * s.cols || s.rows == 0) throw PreconditionError("saliency map has no grid");
  const std::size_t W = base.width, H = base.height;
  Tensor<double> grid({s.rows, s.cols, 1});
  for (std::size_t i = 0; i < s.normalized.size(); ++i) grid[i] = s.degenerate ? 0.0 : double(s.normalized[i]);
  Tensor<double> up({H, W, 1});
  if (spec.upsample == Upsample::bilinear) {
    up = resize_bilinear(grid, H, W);
  } else {
    for (std::size_t y = 0; y < H; ++y)
      for (std::size_t x = 0; x < W; ++x) up(y, x, 0) = grid(y * s.rows / H, x * s.cols / W, 0);
  }
  const std::size_t bar = spec.color_bar ? color_bar_height(H) : 0;
  RawImage out(W, H + bar, 255);
  for (std::size_t y = 0; y < H; ++y)
    for (std::size_t x = 0; x < W; ++x) {
      const auto col = diverging_color(up(y, x, 0));
      for (std::size_t c = 0; c < 3; ++c)
        out.at(y, x, c) = round_half_up(spec.alpha * base.at(y, x, c) + (1.0 - spec.alpha) * col[c]);
    }
  for (std::size_t y = H; y < H + bar; ++y)
    for (std::size_t x = 0; x < W; ++x) {
      const double v = W > 1 ? -1.0 + 2.0 * double(x) / double(W - 1) : 0.0;
      const auto col = diverging_color(v);
      for (std::size_t c = 0; c < 3; ++c) out.at(y, x, c) = col[c];
    }
  return out;
}

}  // namespace attnguide
