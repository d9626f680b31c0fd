#pragma once

#include <cmath>
#include <string>

#include "json.hpp"

#include "attnguide/attention_grad.hpp"

namespace attnguide {

enum class Scheme { positive, complete, absolute };

inline const char* to_string(Scheme s) {
  switch (s) {
    case Scheme::positive: return "positive";
    case Scheme::complete: return "complete";
    case Scheme::absolute: return "absolute";
  }
  return "?";
}

inline Scheme parse_scheme(const std::string& s) {
  if (s == "positive") return Scheme::positive;
  if (s == "complete") return Scheme::complete;
  if (s == "absolute") return Scheme::absolute;
  throw Error(ErrorCategory::usage, "unknown scheme '" + s + "' (want positive, complete or absolute)");
}

/// I + mean over heads of f(grad) * A, with f the positive part, identity or
/// absolute value.
template <std::floating_point Real>
Tensor<Real> correct_layer(const Tensor<Real>& attn, const Tensor<Real>& grad, Scheme scheme) {
  if (attn.shape() != grad.shape()) throw ShapeError("correct_layer", attn.shape(), grad.shape());
  if (attn.rank() != 3 || attn.dim(1) != attn.dim(2)) throw ShapeError("correct_layer expects [H,T,T], got " + shape_str(attn.shape()));
  const std::size_t H = attn.dim(0), T = attn.dim(1);
  Tensor<Real> out = Tensor<Real>::identity(T);
  const Real inv_h = Real(1) / Real(H);
  for (std::size_t i = 0; i < T; ++i)
    for (std::size_t j = 0; j < T; ++j) {
      Real acc = 0;
      for (std::size_t h = 0; h < H; ++h) {
        Real g = grad(h, i, j);
        if (scheme == Scheme::positive) g = std::max(g, Real(0));
        else if (scheme == Scheme::absolute) g = std::abs(g);
        acc += g * attn(h, i, j);
      }
      out(i, j) += acc * inv_h;
    }
  return out;
}

/// [L,T,T] stack of corrected maps from [L,H,T,T] attention and gradients.
template <std::floating_point Real>
Tensor<Real> correct_stack(const Tensor<Real>& attn, const Tensor<Real>& grads, Scheme scheme) {
  if (attn.shape() != grads.shape() || attn.rank() != 4) throw ShapeError("correct_stack", attn.shape(), grads.shape());
  std::vector<Tensor<Real>> layers;
  for (std::size_t l = 0; l < attn.dim(0); ++l) layers.push_back(correct_layer(attn.slice(l), grads.slice(l), scheme));
  return stack(layers);
}

/// Product of the corrected maps with the last layer leftmost.
template <std::floating_point Real>
Tensor<Real> rollout(const Tensor<Real>& corrected) {
  if (corrected.rank() != 3 || corrected.dim(0) < 1) throw ShapeError("rollout expects [L,T,T], got " + shape_str(corrected.shape()));
  Tensor<Real> r = corrected.slice(0);
  for (std::size_t l = 1; l < corrected.dim(0); ++l) r = matmul(corrected.slice(l), r);
  return r;
}

template <std::floating_point Real>
struct SaliencyMap {
  std::vector<Real> scores;
  std::vector<Real> normalized;
  std::size_t rows = 0, cols = 0;
  bool degenerate = false;
  std::string scheme;
  std::string loss;
};

/// Row 0 of the rollout without its cls column, laid out on a rows×cols grid.
template <std::floating_point Real>
SaliencyMap<Real> cls_saliency(const Tensor<Real>& r, std::size_t rows, std::size_t cols) {
  if (r.rank() != 2 || r.rows() != r.cols() || r.rows() < 2) throw ShapeError("cls_saliency expects square [T,T] with T >= 2, got " + shape_str(r.shape()));
  if (rows * cols != r.cols() - 1) throw ShapeError("cls_saliency: grid " + std::to_string(rows) + "x" + std::to_string(cols) + " does not hold " + std::to_string(r.cols() - 1) + " tokens");
  SaliencyMap<Real> s;
  s.rows = rows;
  s.cols = cols;
  s.scores.assign(r.storage().begin() + 1, r.storage().begin() + r.cols());
  return s;
}

/// Divides by max |score|; an all-zero map stays zero and is flagged.
template <std::floating_point Real>
SaliencyMap<Real> normalize_signed(SaliencyMap<Real> s) {
  Real m = 0;
  for (Real v : s.scores) m = std::max(m, std::abs(v));
  s.normalized = s.scores;
  s.degenerate = m == Real(0);
  if (!s.degenerate)
    for (auto& v : s.normalized) v /= m;
  return s;
}

template <std::floating_point Real>
SaliencyMap<Real> saliency_from(const ModelConfig& c, const Tensor<Real>& attn, const Tensor<Real>& grads, Scheme scheme) {
  auto s = normalize_signed(cls_saliency(rollout(correct_stack(attn, grads, scheme)), c.grid(), c.grid()));
  s.scheme = to_string(scheme);
  return s;
}

template <std::floating_point Real>
SaliencyMap<Real> interpret(const ModelWeights<Real>& w, const Tensor<Real>& image, const LossSpec& spec, Scheme scheme) {
  auto g = attention_gradients(w, image, spec);
  auto s = saliency_from(w.config, g.attention, g.grads, scheme);
  s.loss = spec.str();
  return s;
}

/// Mean of the normalized map over a set of patch indices.
template <std::floating_point Real>
Real region_mean(const SaliencyMap<Real>& s, const std::vector<std::size_t>& patches) {
  if (patches.empty()) throw PreconditionError("region_mean over an empty region");
  Real acc = 0;
  for (auto p : patches) acc += s.normalized.at(p);
  return acc / Real(patches.size());
}

template <std::floating_point Real>
nlohmann::json to_json(const SaliencyMap<Real>& s) {
  return {{"grid", {s.rows, s.cols}}, {"scores", s.scores}, {"normalized", s.normalized},
          {"degenerate", s.degenerate}, {"scheme", s.scheme}, {"loss", s.loss}};
}

}  // namespace attnguide
