#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <vector>

#include "attnguide/rollout.hpp"

namespace attnguide {

// ---- attention transfer ----

template <std::floating_point Real>
struct TransferRecord {
  std::size_t step = 0;
  Real loss = 0;
  Tensor<Real> logits;
  SaliencyMap<Real> saliency;
  std::optional<Tensor<Real>> attention;  // kept on snapshot steps only
};

template <std::floating_point Real>
struct TransferRun {
  Real lr = 0;
  std::size_t steps = 0;
  std::vector<TransferRecord<Real>> records;  // steps + 1 entries, record 0 is the untouched model
};

/// Gradient descent on the attention maps alone. Each map carries a learned
/// offset, A = softmax(QK^T/sqrt(d)) + delta, starting at zero; delta moves by
/// -lr * dloss/dA. Rows are not renormalised.
template <std::floating_point Real>
TransferRun<Real> attention_transfer(const ModelWeights<Real>& w, const Tensor<Real>& image, const LossSpec& spec, Real lr,
                                     std::size_t steps, Scheme scheme, std::size_t snapshot_every = 0) {
  if (!(lr >= 0)) throw PreconditionError("learning rate must be >= 0");
  const ModelConfig& c = w.config;
  TransferRun<Real> run;
  run.lr = lr;
  run.steps = steps;
  ForwardOptions<Real> opt;
  for (std::size_t l = 0; l < c.num_layers; ++l)
    opt.attention_offset.push_back(Tensor<Real>({c.num_heads, c.tokens(), c.tokens()}));
  auto g = attention_gradients(w, image, spec, opt);
  for (std::size_t t = 0;; ++t) {
    TransferRecord<Real> rec;
    rec.step = t;
    rec.loss = g.loss;
    rec.logits = g.logits;
    rec.saliency = saliency_from(c, g.attention, g.grads, scheme);
    rec.saliency.loss = spec.str();
    if (snapshot_every && t % snapshot_every == 0) rec.attention = g.attention;
    run.records.push_back(std::move(rec));
    if (t == steps) break;
    for (std::size_t l = 0; l < c.num_layers; ++l) {
      Tensor<Real>& d = *opt.attention_offset[l];
      const Tensor<Real> gl = g.grads.slice(l);
      for (std::size_t i = 0; i < d.size(); ++i) d[i] -= lr * gl[i];
    }
    g = attention_gradients(w, image, spec, opt);
  }
  return run;
}

// ---- pixel rewriting ----

template <std::floating_point Real>
struct Prediction {
  std::size_t cls = 0;
  Real probability = 0;
  Real logit = 0;
};

template <std::floating_point Real>
Prediction<Real> top1(const Tensor<Real>& logits) {
  const std::size_t k = argmax(logits);
  return {k, softmax(logits)[k], logits[k]};
}

enum class StopWhen { argmax_flip, steps };

template <std::floating_point Real>
struct RewriteStep {
  Real loss = 0;
  Tensor<Real> logits;
  std::size_t argmax = 0;
};

template <std::floating_point Real>
struct RewriteRun {
  Real step_size = 0;
  std::size_t max_steps = 0;
  std::optional<Real> eps;
  Real clamp_lo = -1, clamp_hi = 1;
  std::vector<RewriteStep<Real>> steps;
  Prediction<Real> original, updated;
  bool flipped = false;
  Real linf = 0, l2 = 0;
  Tensor<Real> image;
};

/// x <- clamp(x - step * dloss/dx), projected into the eps box around the
/// start image when eps is set.
template <std::floating_point Real>
RewriteRun<Real> rewrite_image(const ModelWeights<Real>& w, const Tensor<Real>& image, const LossSpec& spec, Real step_size,
                               std::size_t max_steps, std::optional<Real> eps, StopWhen stop = StopWhen::argmax_flip,
                               Real clamp_lo = -1, Real clamp_hi = 1) {
  if (!(step_size >= 0)) throw PreconditionError("step size must be >= 0");
  if (eps && !(*eps >= 0)) throw PreconditionError("eps must be >= 0");
  if (!(clamp_lo < clamp_hi)) throw PreconditionError("empty pixel clamp range");
  spec.validate(w.config.num_classes);
  RewriteRun<Real> run;
  run.step_size = step_size;
  run.max_steps = max_steps;
  run.eps = eps;
  run.clamp_lo = clamp_lo;
  run.clamp_hi = clamp_hi;
  const Tensor<Real> logits0 = logits_of(w, image);
  run.original = top1(logits0);
  run.updated = run.original;
  run.image = image;
  if (step_size == 0) return run;

  Tensor<Real>& x = run.image;
  for (std::size_t k = 0; k < max_steps; ++k) {
    auto [loss, grad] = loss_and_pixel_gradients(w, x, spec);
    for (std::size_t i = 0; i < x.size(); ++i) {
      Real v = x[i] - step_size * grad[i];
      if (eps) v = std::clamp(v, image[i] - *eps, image[i] + *eps);
      x[i] = std::clamp(v, clamp_lo, clamp_hi);
      // image +- eps may round outward; pull back so |x - image| <= eps holds exactly
      if (eps)
        while (std::abs(x[i] - image[i]) > *eps) x[i] = std::nextafter(x[i], image[i]);
    }
    const Tensor<Real> logits = logits_of(w, x);
    RewriteStep<Real> s{eval_loss(logits, spec), logits, argmax(logits)};
    run.steps.push_back(s);
    run.updated = top1(logits);
    if (s.argmax != run.original.cls) run.flipped = true;
    if (stop == StopWhen::argmax_flip && run.flipped) break;
  }
  Real l2 = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const Real d = x[i] - image[i];
    run.linf = std::max(run.linf, std::abs(d));
    l2 += d * d;
  }
  run.l2 = std::sqrt(l2);
  return run;
}

// ---- perturbation ----

enum class Direction { positive, negative };

template <std::floating_point Real>
struct PerturbCurve {
  std::vector<Real> fractions;
  std::vector<Real> values;
  std::vector<std::size_t> order;
  std::string provenance;
};

/// Patch order for masking: positive is most salient first, negative least
/// salient first; ties go to the lower index.
template <std::floating_point Real>
std::vector<std::size_t> masking_order(const std::vector<Real>& scores, Direction d) {
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    return d == Direction::positive ? scores[a] > scores[b] : scores[a] < scores[b];
  });
  return idx;
}

/// Sets every pixel of the listed patches to model-space zero.
template <std::floating_point Real>
void mask_patches(Tensor<Real>& image, const ModelConfig& cfg, std::span<const std::size_t> patches) {
  const std::size_t P = cfg.patch_size, g = cfg.grid(), C = cfg.channels;
  for (auto p : patches) {
    const std::size_t r = p / g, c = p % g;
    for (std::size_t y = r * P; y < (r + 1) * P; ++y)
      for (std::size_t x = c * P; x < (c + 1) * P; ++x)
        for (std::size_t ch = 0; ch < C; ++ch) image(y, x, ch) = 0;
  }
}

/// Target-class probability after masking round(k*N/K) patches in `order`,
/// for k = 0..K.
template <std::floating_point Real>
PerturbCurve<Real> perturbation_curve_for_order(const ModelWeights<Real>& w, const Tensor<Real>& image,
                                                std::vector<std::size_t> order, std::size_t K, std::size_t target) {
  const ModelConfig& c = w.config;
  const std::size_t N = c.num_patches();
  if (K < 1) throw PreconditionError("perturbation schedule needs K >= 1");
  if (target >= c.num_classes) throw PreconditionError("target class out of range");
  std::vector<char> seen(N, 0);
  if (order.size() != N) throw PreconditionError("masking order must list every patch once");
  for (auto p : order) {
    if (p >= N || seen[p]) throw PreconditionError("masking order must list every patch once");
    seen[p] = 1;
  }
  PerturbCurve<Real> curve;
  curve.order = std::move(order);
  for (std::size_t k = 0; k <= K; ++k) {
    const auto n = static_cast<std::size_t>(std::llround(double(k) * double(N) / double(K)));
    Tensor<Real> x = image;
    mask_patches(x, c, std::span<const std::size_t>(curve.order.data(), n));
    curve.fractions.push_back(Real(k) / Real(K));
    curve.values.push_back(softmax(logits_of(w, x))[target]);
  }
  return curve;
}

template <std::floating_point Real>
PerturbCurve<Real> perturbation_curve(const ModelWeights<Real>& w, const Tensor<Real>& image, const SaliencyMap<Real>& s,
                                      Direction d, std::size_t K, std::size_t target) {
  if (s.scores.size() != w.config.num_patches()) throw PreconditionError("saliency length must equal the patch count");
  auto curve = perturbation_curve_for_order(w, image, masking_order(s.scores, d), K, target);
  curve.provenance = std::string(d == Direction::positive ? "positive" : "negative") + ":" + s.scheme;
  return curve;
}

/// Trapezoidal area under values over fractions.
template <std::floating_point Real>
Real auc(const PerturbCurve<Real>& c) {
  if (c.fractions.size() != c.values.size() || c.values.size() < 2) throw PreconditionError("curve needs >= 2 matching points");
  Real a = 0;
  for (std::size_t i = 0; i + 1 < c.values.size(); ++i) {
    const Real dx = c.fractions[i + 1] - c.fractions[i];
    if (!(dx > 0)) throw PreconditionError("curve fractions must be strictly increasing");
    a += dx * (c.values[i] + c.values[i + 1]) / Real(2);
  }
  return a;
}

}  // namespace attnguide
