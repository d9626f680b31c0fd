#pragma once

#include <cmath>
#include <vector>

#include "attnguide/preprocess.hpp"
#include "attnguide/rollout.hpp"

namespace attnguide {

enum class Placement { right, bottom };

inline Placement parse_placement(const std::string& s) {
  if (s == "right") return Placement::right;
  if (s == "bottom") return Placement::bottom;
  throw Error(ErrorCategory::usage, "unknown placement '" + s + "' (want right or bottom)");
}

struct CompositeLayout {
  Placement placement = Placement::right;
  double guide_fraction = 0.5;
};

template <std::floating_point Real>
struct Composite {
  Tensor<Real> image;                // [S,S,C] model-input sized
  std::vector<std::size_t> source;   // patches fully inside the source part
  std::vector<std::size_t> guide;    // patches fully inside the guide part
  std::size_t split_px = 0;          // first pixel column/row of the guide
};

/// Places `image` first (left/top) and `guide` after it (right/bottom), each
/// bilinearly resized into its strip. Patches straddling the seam belong to
/// neither mask.
template <std::floating_point Real>
Composite<Real> composite_guide(const Tensor<Real>& image, const Tensor<Real>& guide, const CompositeLayout& layout,
                                const ModelConfig& cfg) {
  if (!(layout.guide_fraction > 0 && layout.guide_fraction < 1))
    throw PreconditionError("guide fraction must lie in (0,1)");
  if (image.rank() != 3 || guide.rank() != 3 || image.dim(2) != cfg.channels || guide.dim(2) != cfg.channels)
    throw ShapeError("composite_guide", image.shape(), guide.shape());
  const std::size_t S = cfg.image_size, P = cfg.patch_size, g = cfg.grid();
  const auto guide_px = static_cast<std::size_t>(std::lround(layout.guide_fraction * double(S)));
  if (guide_px < P || S - std::min(guide_px, S) < P)
    throw PreconditionError("composite part smaller than one patch (guide " + std::to_string(guide_px) + " px of " +
                            std::to_string(S) + ", patch " + std::to_string(P) + ")");
  const std::size_t src_px = S - guide_px;
  const bool right = layout.placement == Placement::right;

  Composite<Real> out;
  out.split_px = src_px;
  out.image = Tensor<Real>({S, S, cfg.channels});
  const Tensor<Real> a = right ? resize_bilinear(image, S, src_px) : resize_bilinear(image, src_px, S);
  const Tensor<Real> b = right ? resize_bilinear(guide, S, guide_px) : resize_bilinear(guide, guide_px, S);
  for (std::size_t y = 0; y < S; ++y)
    for (std::size_t x = 0; x < S; ++x)
      for (std::size_t c = 0; c < cfg.channels; ++c) {
        const std::size_t along = right ? x : y;
        if (along < src_px)
          out.image(y, x, c) = a(y, x, c);
        else
          out.image(y, x, c) = right ? b(y, x - src_px, c) : b(y - src_px, x, c);
      }
  for (std::size_t r = 0; r < g; ++r)
    for (std::size_t col = 0; col < g; ++col) {
      const std::size_t k = right ? col : r;
      if ((k + 1) * P <= src_px) out.source.push_back(r * g + col);
      else if (k * P >= src_px) out.guide.push_back(r * g + col);
    }
  return out;
}

/// Saliency under a contrastive loss: positive regions lean towards c1,
/// negative ones towards c2.
template <std::floating_point Real>
SaliencyMap<Real> detail_interpret(const ModelWeights<Real>& w, const Tensor<Real>& image, std::size_t c1, std::size_t c2,
                                   LossSpec::Kind form, Scheme scheme) {
  if (c1 == c2) throw PreconditionError("detail interpretation: classes must differ");
  if (form == LossSpec::Kind::single_logit) throw PreconditionError("detail interpretation needs a two-class loss");
  return interpret(w, image, LossSpec{form, c1, c2}, scheme);
}

}  // namespace attnguide
