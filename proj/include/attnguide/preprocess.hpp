#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "attnguide/config.hpp"
#include "attnguide/image.hpp"

namespace attnguide {

/// Bilinear resize of an [H,W,C] image with half-pixel centres and edge clamping.
template <std::floating_point Real>
Tensor<Real> resize_bilinear(const Tensor<Real>& img, std::size_t out_h, std::size_t out_w) {
  if (img.rank() != 3) throw ShapeError("resize expects [H,W,C], got " + shape_str(img.shape()));
  if (out_h == 0 || out_w == 0) throw PreconditionError("resize to an empty image");
  const std::size_t h = img.dim(0), w = img.dim(1), c = img.dim(2);
  if (h == out_h && w == out_w) return img;
  Tensor<Real> out({out_h, out_w, c});
  auto coord = [](std::size_t o, std::size_t in, std::size_t outn, std::size_t& i0, std::size_t& i1, Real& f) {
    Real s = (Real(o) + Real(0.5)) * Real(in) / Real(outn) - Real(0.5);
    s = std::clamp(s, Real(0), Real(in - 1));
    i0 = static_cast<std::size_t>(std::floor(s));
    i1 = std::min(i0 + 1, in - 1);
    f = s - Real(i0);
  };
  for (std::size_t y = 0; y < out_h; ++y) {
    std::size_t y0, y1;
    Real fy;
    coord(y, h, out_h, y0, y1, fy);
    for (std::size_t x = 0; x < out_w; ++x) {
      std::size_t x0, x1;
      Real fx;
      coord(x, w, out_w, x0, x1, fx);
      for (std::size_t ch = 0; ch < c; ++ch) {
        const Real top = img(y0, x0, ch) * (1 - fx) + img(y0, x1, ch) * fx;
        const Real bot = img(y1, x0, ch) * (1 - fx) + img(y1, x1, ch) * fx;
        out(y, x, ch) = top * (1 - fy) + bot * fy;
      }
    }
  }
  return out;
}

/// Per-channel (x - mean) / std on a [H,W,C] image.
template <std::floating_point Real>
Tensor<Real> normalize_channels(Tensor<Real> img, const std::vector<double>& mean, const std::vector<double>& std) {
  const std::size_t c = img.dim(2);
  if (mean.size() != c || std.size() != c) throw PreconditionError("mean/std need one entry per channel");
  for (double s : std)
    if (!(s > 0)) throw PreconditionError("std must be > 0 per channel");
  for (std::size_t i = 0; i < img.size(); ++i) img[i] = Real((double(img[i]) - mean[i % c]) / std[i % c]);
  return img;
}

/// Inverse of normalize_channels.
template <std::floating_point Real>
Tensor<Real> denormalize_channels(Tensor<Real> img, const std::vector<double>& mean, const std::vector<double>& std) {
  const std::size_t c = img.dim(2);
  for (std::size_t i = 0; i < img.size(); ++i) img[i] = Real(double(img[i]) * std[i % c] + mean[i % c]);
  return img;
}

/// Resize to the model input, scale to [0,1], then standardise.
template <std::floating_point Real>
ImageTensor<Real> preprocess(const RawImage& raw, const ModelConfig& cfg, const std::vector<double>& mean = {0.5, 0.5, 0.5},
                             const std::vector<double>& std = {0.5, 0.5, 0.5}, const std::string& source = "") {
  if (cfg.channels != 3) throw PreconditionError("RGB input needs a 3-channel model");
  ImageTensor<Real> out;
  out.provenance.source = source;
  out.provenance.original_width = raw.width;
  out.provenance.original_height = raw.height;
  out.provenance.mean = mean;
  out.provenance.std = std;
  Tensor<Real> unit = to_unit<Real>(raw);
  if (raw.width != cfg.image_size || raw.height != cfg.image_size) {
    unit = resize_bilinear(unit, cfg.image_size, cfg.image_size);
    out.provenance.resize = "bilinear";
  }
  out.data = normalize_channels(std::move(unit), mean, std);
  return out;
}

}  // namespace attnguide
