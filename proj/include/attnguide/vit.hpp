#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "attnguide/config.hpp"
#include "attnguide/tape.hpp"
#include "attnguide/tensor.hpp"

namespace attnguide {

template <std::floating_point Real>
struct BlockWeights {
  Tensor<Real> ln1_gamma, ln1_beta;
  Tensor<Real> wq, bq, wk, bk, wv, bv, wo, bo;
  Tensor<Real> ln2_gamma, ln2_beta;
  Tensor<Real> w1, b1, w2, b2;
};

template <std::floating_point Real>
struct ModelWeights {
  ModelConfig config;
  Tensor<Real> patch_w, patch_b;
  Tensor<Real> cls_token;
  Tensor<Real> pos_embed;
  std::vector<BlockWeights<Real>> blocks;
  Tensor<Real> norm_gamma, norm_beta;
  Tensor<Real> head_w, head_b;

  /// Every parameter with its container name, in a fixed order.
  template <typename F>
  void visit(F&& f) {
    f("patch_embed.weight", patch_w);
    f("patch_embed.bias", patch_b);
    f("cls_token", cls_token);
    f("pos_embed", pos_embed);
    for (std::size_t i = 0; i < blocks.size(); ++i) {
      auto& b = blocks[i];
      const std::string p = "block" + std::to_string(i) + ".";
      f(p + "ln1.gamma", b.ln1_gamma);
      f(p + "ln1.beta", b.ln1_beta);
      f(p + "attn.wq", b.wq);
      f(p + "attn.bq", b.bq);
      f(p + "attn.wk", b.wk);
      f(p + "attn.bk", b.bk);
      f(p + "attn.wv", b.wv);
      f(p + "attn.bv", b.bv);
      f(p + "attn.wo", b.wo);
      f(p + "attn.bo", b.bo);
      f(p + "ln2.gamma", b.ln2_gamma);
      f(p + "ln2.beta", b.ln2_beta);
      f(p + "mlp.w1", b.w1);
      f(p + "mlp.b1", b.b1);
      f(p + "mlp.w2", b.w2);
      f(p + "mlp.b2", b.b2);
    }
    f("norm.gamma", norm_gamma);
    f("norm.beta", norm_beta);
    f("head.weight", head_w);
    f("head.bias", head_b);
  }
  template <typename F>
  void visit(F&& f) const {
    const_cast<ModelWeights*>(this)->visit([&](const std::string& n, Tensor<Real>& t) { f(n, std::as_const(t)); });
  }

  /// Zero-filled weights of the right shapes (unit LayerNorm gains).
  static ModelWeights zeros(const ModelConfig& cfg) {
    cfg.validate();
    ModelWeights w;
    w.config = cfg;
    w.blocks.resize(cfg.num_layers);
    w.visit([&](const std::string& name, Tensor<Real>& t) {
      t = Tensor<Real>(expected_shape(cfg, name));
      if (name.ends_with("gamma")) t = Tensor<Real>(t.shape(), Real(1));
    });
    return w;
  }

  static Shape expected_shape(const ModelConfig& c, const std::string& name) {
    const std::size_t d = c.embed_dim;
    if (name == "patch_embed.weight") return {c.patch_dim(), d};
    if (name == "cls_token") return {d};
    if (name == "pos_embed") return {c.tokens(), d};
    if (name == "head.weight") return {d, c.num_classes};
    if (name == "head.bias") return {c.num_classes};
    const auto dot = name.rfind('.');
    const std::string leaf = name.substr(dot + 1);
    if (name.ends_with("mlp.w1")) return {d, c.hidden_dim()};
    if (name.ends_with("mlp.b1")) return {c.hidden_dim()};
    if (name.ends_with("mlp.w2")) return {c.hidden_dim(), d};
    if (leaf.size() == 2 && leaf[0] == 'w') return {d, d};
    return {d};
  }

  void validate() const {
    config.validate();
    if (blocks.size() != config.num_layers)
      throw PreconditionError("weights hold " + std::to_string(blocks.size()) + " blocks, config says " +
                              std::to_string(config.num_layers));
    visit([&](const std::string& name, const Tensor<Real>& t) {
      const Shape want = expected_shape(config, name);
      if (t.shape() != want) throw ShapeError(name, want, t.shape());
      if (!t.all_finite()) throw DataError("non-finite values in " + name);
    });
  }

  template <std::floating_point Other>
  ModelWeights<Other> cast() const {
    ModelWeights<Other> out = ModelWeights<Other>::zeros(config);
    std::vector<const Tensor<Real>*> src;
    visit([&](const std::string&, const Tensor<Real>& t) { src.push_back(&t); });
    std::size_t k = 0;
    out.visit([&](const std::string&, Tensor<Other>& t) {
      std::vector<Other> d(src[k]->storage().begin(), src[k]->storage().end());
      t = Tensor<Other>(src[k]->shape(), std::move(d));
      ++k;
    });
    return out;
  }
};

/// Seeded Gaussian weights, rounded through float32 so they survive the
/// container format bit-exactly.
template <std::floating_point Real>
ModelWeights<Real> random_weights(const ModelConfig& cfg, std::uint64_t seed, double scale = 0.3) {
  auto w = ModelWeights<Real>::zeros(cfg);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 1.0);
  w.visit([&](const std::string& name, Tensor<Real>& t) {
    for (auto& v : t.storage()) {
      double x = scale * n(rng);
      if (name.ends_with("gamma")) x += 1.0;
      v = Real(static_cast<float>(x));
    }
  });
  return w;
}

template <std::floating_point Real>
struct ForwardOptions {
  /// Per layer: if set, the H×T×T maps replace the softmax output and become
  /// free leaves (detached from Q and K).
  std::vector<std::optional<Tensor<Real>>> attention_override;
  /// Per layer: H×T×T added to the softmax output. The sum is the map that
  /// gets watched, so gradients still flow through later layers' softmax.
  std::vector<std::optional<Tensor<Real>>> attention_offset;
  bool track_pixels = false;
};

template <std::floating_point Real>
struct ForwardTrace {
  std::unique_ptr<Tape<Real>> tape;
  Var<Real> image;
  Var<Real> logits;
  std::vector<std::vector<Var<Real>>> attention_vars;  // [layer][head]
  std::size_t token_count = 0;

  Tensor<Real> logit_values() const { return logits.value(); }

  /// L×H×T×T stack of the captured maps.
  Tensor<Real> attention() const {
    std::vector<Tensor<Real>> layers;
    for (const auto& heads : attention_vars) {
      std::vector<Tensor<Real>> hs;
      for (const auto& v : heads) hs.push_back(v.value());
      layers.push_back(stack(hs));
    }
    return stack(layers);
  }

  std::vector<Var<Real>> flat_attention() const {
    std::vector<Var<Real>> out;
    for (const auto& heads : attention_vars) out.insert(out.end(), heads.begin(), heads.end());
    return out;
  }
};

/// Pre-LN ViT forward pass on a model-space image [H,W,C]. Every attention map
/// is recorded on the tape so gradients with respect to it are available.
template <std::floating_point Real>
ForwardTrace<Real> forward(const ModelWeights<Real>& w, const Tensor<Real>& image, const ForwardOptions<Real>& opt = {}) {
  const ModelConfig& c = w.config;
  const Shape want{c.image_size, c.image_size, c.channels};
  if (image.shape() != want) throw ShapeError("forward image", want, image.shape());
  if (!opt.attention_override.empty() && opt.attention_override.size() != c.num_layers)
    throw PreconditionError("attention override must have one entry per layer");
  if (!opt.attention_offset.empty() && opt.attention_offset.size() != c.num_layers)
    throw PreconditionError("attention offset must have one entry per layer");

  ForwardTrace<Real> tr;
  tr.tape = std::make_unique<Tape<Real>>();
  Tape<Real>& t = *tr.tape;
  const std::size_t D = c.embed_dim, H = c.num_heads, dh = c.head_dim(), T = c.tokens();
  const Real eps = Real(c.layernorm_eps);
  const Real qk_scale = Real(1) / std::sqrt(Real(dh));
  auto k = [&](const Tensor<Real>& x) { return t.constant(x); };

  tr.image = t.leaf(image, opt.track_pixels);
  Var<Real> patches = patchify(tr.image, c.patch_size);
  Var<Real> emb = add_bias(matmul(patches, k(w.patch_w)), k(w.patch_b));
  Var<Real> x = add(concat_rows<Real>({k(w.cls_token.reshaped({1, D})), emb}), k(w.pos_embed));

  for (std::size_t l = 0; l < c.num_layers; ++l) {
    const auto& b = w.blocks[l];
    const bool overridden = !opt.attention_override.empty() && opt.attention_override[l].has_value();
    if (overridden && opt.attention_override[l]->shape() != Shape{H, T, T})
      throw ShapeError("attention override", Shape{H, T, T}, opt.attention_override[l]->shape());
    const bool offset = !overridden && !opt.attention_offset.empty() && opt.attention_offset[l].has_value();
    if (offset && opt.attention_offset[l]->shape() != Shape{H, T, T})
      throw ShapeError("attention offset", Shape{H, T, T}, opt.attention_offset[l]->shape());

    Var<Real> y = layernorm(x, k(b.ln1_gamma), k(b.ln1_beta), eps);
    Var<Real> v = add_bias(matmul(y, k(b.wv)), k(b.bv));
    std::optional<Var<Real>> q, kk;
    if (!overridden) {
      q = add_bias(matmul(y, k(b.wq)), k(b.bq));
      kk = add_bias(matmul(y, k(b.wk)), k(b.bk));
    }
    std::vector<Var<Real>> heads, maps;
    for (std::size_t h = 0; h < H; ++h) {
      Var<Real> a;
      if (overridden) {
        a = t.leaf(opt.attention_override[l]->slice(h), true);
      } else {
        Var<Real> qh = slice_cols(*q, h * dh, (h + 1) * dh);
        Var<Real> kh = slice_cols(*kk, h * dh, (h + 1) * dh);
        Var<Real> sm = softmax_rows(scale(matmul(qh, transpose(kh)), qk_scale));
        if (offset) sm = add(sm, k(opt.attention_offset[l]->slice(h)));
        a = t.watch(sm);
      }
      maps.push_back(a);
      heads.push_back(matmul(a, slice_cols(v, h * dh, (h + 1) * dh)));
    }
    tr.attention_vars.push_back(std::move(maps));
    x = add(x, add_bias(matmul(concat_cols(heads), k(b.wo)), k(b.bo)));

    Var<Real> y2 = layernorm(x, k(b.ln2_gamma), k(b.ln2_beta), eps);
    Var<Real> hid = gelu(add_bias(matmul(y2, k(b.w1)), k(b.b1)));
    x = add(x, add_bias(matmul(hid, k(b.w2)), k(b.b2)));
  }

  Var<Real> cls = layernorm(slice_rows(x, 0, 1), k(w.norm_gamma), k(w.norm_beta), eps);
  tr.logits = reshape(add_bias(matmul(cls, k(w.head_w)), k(w.head_b)), {c.num_classes});
  tr.token_count = T;
  return tr;
}

template <std::floating_point Real>
Tensor<Real> logits_of(const ModelWeights<Real>& w, const Tensor<Real>& image) {
  return forward(w, image).logit_values();
}

template <std::floating_point Real>
Tensor<Real> softmax(const Tensor<Real>& logits) {
  Real mx = logits[0];
  for (Real v : logits.data()) mx = std::max(mx, v);
  Tensor<Real> out(logits.shape());
  Real z = 0;
  for (std::size_t i = 0; i < out.size(); ++i) z += out[i] = std::exp(logits[i] - mx);
  for (auto& v : out.storage()) v /= z;
  return out;
}

/// Index of the largest entry; ties go to the lowest index.
template <std::floating_point Real>
std::size_t argmax(const Tensor<Real>& v) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i)
    if (v[i] > v[best]) best = i;
  return best;
}

}  // namespace attnguide
