#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "attnguide/tensor.hpp"

namespace attnguide {

/// 8-bit interleaved RGB, row-major.
struct RawImage {
  std::size_t width = 0, height = 0;
  std::vector<std::uint8_t> rgb;

  RawImage() = default;
  RawImage(std::size_t w, std::size_t h, std::uint8_t fill = 0) : width(w), height(h), rgb(w * h * 3, fill) {}

  std::uint8_t& at(std::size_t y, std::size_t x, std::size_t c) { return rgb[(y * width + x) * 3 + c]; }
  std::uint8_t at(std::size_t y, std::size_t x, std::size_t c) const { return rgb[(y * width + x) * 3 + c]; }

  friend bool operator==(const RawImage&, const RawImage&) = default;
};

/// Where a model-space image came from.
struct Provenance {
  std::string source;
  std::size_t original_width = 0, original_height = 0;
  std::string resize = "none";
  std::vector<double> mean{0.5, 0.5, 0.5};
  std::vector<double> std{0.5, 0.5, 0.5};
};

/// [H,W,C] image in model space plus its provenance.
template <std::floating_point Real>
struct ImageTensor {
  Tensor<Real> data;
  Provenance provenance;
};

/// Raw [0,1] float image ([H,W,3]) from 8-bit pixels.
template <std::floating_point Real>
Tensor<Real> to_unit(const RawImage& img) {
  Tensor<Real> t({img.height, img.width, 3});
  for (std::size_t i = 0; i < img.rgb.size(); ++i) t[i] = Real(img.rgb[i]) / Real(255);
  return t;
}

/// Round-half-up quantisation of a [0,1] float image to 8 bits, clamping.
template <std::floating_point Real>
RawImage from_unit(const Tensor<Real>& t) {
  if (t.rank() != 3 || t.dim(2) != 3) throw ShapeError("from_unit expects [H,W,3], got " + shape_str(t.shape()));
  RawImage img(t.dim(1), t.dim(0));
  for (std::size_t i = 0; i < t.size(); ++i) {
    const Real v = std::clamp(t[i], Real(0), Real(1)) * Real(255);
    img.rgb[i] = static_cast<std::uint8_t>(std::floor(v + Real(0.5)));
  }
  return img;
}

}  // namespace attnguide
