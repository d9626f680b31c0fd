#pragma once

#include <vector>

#include "attnguide/loss.hpp"
#include "attnguide/vit.hpp"

namespace attnguide {

template <std::floating_point Real>
struct AttentionGradients {
  Tensor<Real> logits;     // [C]
  Real loss = 0;
  Tensor<Real> attention;  // [L,H,T,T] post-softmax (or overridden) maps
  Tensor<Real> grads;      // [L,H,T,T] d loss / d attention
};

namespace detail {
template <std::floating_point Real>
Tensor<Real> restack(const ModelConfig& c, std::vector<Tensor<Real>> flat) {
  std::vector<Tensor<Real>> layers;
  for (std::size_t l = 0; l < c.num_layers; ++l) {
    std::vector<Tensor<Real>> heads(flat.begin() + l * c.num_heads, flat.begin() + (l + 1) * c.num_heads);
    layers.push_back(stack(heads));
  }
  return stack(layers);
}
}  // namespace detail

/// d loss / d A for every layer and head, A being the post-softmax map.
template <std::floating_point Real>
AttentionGradients<Real> attention_gradients(const ModelWeights<Real>& w, const Tensor<Real>& image, const LossSpec& spec,
                                             const ForwardOptions<Real>& opt = {}) {
  spec.validate(w.config.num_classes);
  auto tr = forward(w, image, opt);
  Var<Real> loss = eval_loss(tr.logits, spec);
  AttentionGradients<Real> out;
  out.logits = tr.logit_values();
  out.loss = loss.value()[0];
  out.attention = tr.attention();
  out.grads = detail::restack(w.config, tr.tape->backward(loss, tr.flat_attention()));
  return out;
}

/// d loss / d pixel in model space, image-shaped.
template <std::floating_point Real>
Tensor<Real> pixel_gradients(const ModelWeights<Real>& w, const Tensor<Real>& image, const LossSpec& spec) {
  spec.validate(w.config.num_classes);
  ForwardOptions<Real> opt;
  opt.track_pixels = true;
  auto tr = forward(w, image, opt);
  Var<Real> loss = eval_loss(tr.logits, spec);
  return tr.tape->backward(loss, tr.image);
}

/// Loss value and pixel gradient from one forward pass.
template <std::floating_point Real>
std::pair<Real, Tensor<Real>> loss_and_pixel_gradients(const ModelWeights<Real>& w, const Tensor<Real>& image,
                                                       const LossSpec& spec, Tensor<Real>* logits = nullptr) {
  spec.validate(w.config.num_classes);
  ForwardOptions<Real> opt;
  opt.track_pixels = true;
  auto tr = forward(w, image, opt);
  Var<Real> loss = eval_loss(tr.logits, spec);
  if (logits) *logits = tr.logit_values();
  return {loss.value()[0], tr.tape->backward(loss, tr.image)};
}

}  // namespace attnguide
