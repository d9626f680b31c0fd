#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <numbers>
#include <unordered_map>
#include <utility>
#include <vector>

#include "attnguide/tensor.hpp"

namespace attnguide {

template <std::floating_point Real>
class Tape;

/// Handle to a value recorded on a tape.
template <std::floating_point Real>
struct Var {
  Tape<Real>* tape = nullptr;
  std::size_t id = 0;

  const Tensor<Real>& value() const;
  const Shape& shape() const { return value().shape(); }
};

/// Reverse-mode tape. Nodes are appended in evaluation order, so the node list
/// is already topologically sorted; backward walks it once in reverse.
template <std::floating_point Real>
class Tape {
 public:
  using Grads = std::vector<Tensor<Real>>;
  using Backward = std::function<void(const Tensor<Real>& out_grad, Grads& grads)>;

  struct Node {
    Tensor<Real> value;
    bool requires_grad = false;
    std::vector<std::size_t> inputs;
    Backward backward;
  };

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var<Real> leaf(Tensor<Real> value, bool requires_grad = true) {
    nodes_.push_back(Node{std::move(value), requires_grad, {}, {}});
    return {this, nodes_.size() - 1};
  }
  Var<Real> constant(Tensor<Real> value) { return leaf(std::move(value), false); }

  /// Records an op. `backward` is dropped when no input needs a gradient.
  Var<Real> record(Tensor<Real> value, std::vector<std::size_t> inputs, Backward backward) {
    bool rg = false;
    for (auto i : inputs) rg = rg || nodes_.at(i).requires_grad;
    if (!value.all_finite()) throw DataError("non-finite value produced on tape");
    nodes_.push_back(Node{std::move(value), rg, std::move(inputs), rg ? std::move(backward) : Backward{}});
    return {this, nodes_.size() - 1};
  }

  /// Identity node that always carries a gradient, so intermediates computed
  /// purely from constants can still be differentiated against.
  Var<Real> watch(Var<Real> v) {
    check(v);
    const std::size_t iv = v.id;
    Var<Real> out = record(nodes_[iv].value, {iv}, [this, iv](const Tensor<Real>& g, Grads& grads) {
      if (nodes_[iv].requires_grad) {
        auto& slot = grads[iv];
        if (slot.empty()) slot = g;
        else for (std::size_t i = 0; i < g.size(); ++i) slot[i] += g[i];
      }
    });
    nodes_.back().requires_grad = true;
    if (!nodes_.back().backward) nodes_.back().backward = [](const Tensor<Real>&, Grads&) {};
    return out;
  }

  const Node& node(std::size_t id) const { return nodes_.at(id); }
  std::size_t size() const noexcept { return nodes_.size(); }
  bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }

  /// Gradient of a scalar `loss` with respect to each watched node. Watched
  /// nodes the loss does not depend on get zeros of their own shape.
  std::vector<Tensor<Real>> backward(Var<Real> loss, const std::vector<Var<Real>>& watched) {
    check(loss);
    if (nodes_[loss.id].value.size() != 1)
      throw ShapeError("backward from non-scalar of shape " + shape_str(nodes_[loss.id].value.shape()));
    Grads grads(loss.id + 1);
    grads[loss.id] = Tensor<Real>(nodes_[loss.id].value.shape(), Real(1));
    for (std::size_t i = loss.id + 1; i-- > 0;) {
      const Node& n = nodes_[i];
      if (grads[i].empty() || !n.backward) continue;
      n.backward(grads[i], grads);
    }
    std::vector<Tensor<Real>> out;
    out.reserve(watched.size());
    for (const auto& w : watched) {
      check(w);
      if (w.id < grads.size() && !grads[w.id].empty())
        out.push_back(grads[w.id]);
      else
        out.emplace_back(nodes_[w.id].value.shape());
    }
    return out;
  }

  Tensor<Real> backward(Var<Real> loss, Var<Real> watched) {
    return std::move(backward(loss, std::vector<Var<Real>>{watched}).front());
  }

  void check(Var<Real> v) const {
    if (v.tape != this || v.id >= nodes_.size()) throw PreconditionError("variable does not belong to this tape");
  }

 private:
  std::vector<Node> nodes_;
};

template <std::floating_point Real>
const Tensor<Real>& Var<Real>::value() const {
  return tape->node(id).value;
}

namespace detail {

template <std::floating_point Real>
void accumulate(typename Tape<Real>::Grads& grads, std::size_t id, const Tensor<Real>& g) {
  auto& slot = grads[id];
  if (slot.empty()) {
    slot = g;
    return;
  }
  for (std::size_t i = 0; i < g.size(); ++i) slot[i] += g[i];
}

template <std::floating_point Real>
Tape<Real>& same_tape(Var<Real> a, Var<Real> b) {
  if (!a.tape || a.tape != b.tape) throw PreconditionError("variables from different tapes");
  return *a.tape;
}

template <std::floating_point Real>
void require_rank(const char* op, Var<Real> v, std::size_t rank) {
  if (v.value().rank() != rank)
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                     shape_str(v.value().shape()));
}

}  // namespace detail

template <std::floating_point Real>
Var<Real> matmul(Var<Real> a, Var<Real> b) {
  auto& t = detail::same_tape(a, b);
  const auto& av = a.value();
  const auto& bv = b.value();
  if (av.rank() != 2 || bv.rank() != 2 || av.cols() != bv.rows()) throw ShapeError("matmul", av.shape(), bv.shape());
  const std::size_t ia = a.id, ib = b.id;
  return t.record(matmul(av, bv), {ia, ib}, [&t, ia, ib](const Tensor<Real>& g, auto& grads) {
    if (t.requires_grad(ia)) detail::accumulate<Real>(grads, ia, matmul(g, transpose(t.node(ib).value)));
    if (t.requires_grad(ib)) detail::accumulate<Real>(grads, ib, matmul(transpose(t.node(ia).value), g));
  });
}

template <std::floating_point Real>
Var<Real> transpose(Var<Real> a) {
  auto& t = *a.tape;
  detail::require_rank("transpose", a, 2);
  const std::size_t ia = a.id;
  return t.record(transpose(a.value()), {ia}, [ia](const Tensor<Real>& g, auto& grads) {
    detail::accumulate<Real>(grads, ia, transpose(g));
  });
}

template <std::floating_point Real>
Var<Real> reshape(Var<Real> a, Shape s) {
  auto& t = *a.tape;
  const std::size_t ia = a.id;
  Shape orig = a.value().shape();
  return t.record(a.value().reshaped(std::move(s)), {ia}, [ia, orig](const Tensor<Real>& g, auto& grads) {
    detail::accumulate<Real>(grads, ia, g.reshaped(orig));
  });
}

template <std::floating_point Real>
Var<Real> add(Var<Real> a, Var<Real> b) {
  auto& t = detail::same_tape(a, b);
  if (a.shape() != b.shape()) throw ShapeError("add", a.shape(), b.shape());
  Tensor<Real> out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.value()[i];
  const std::size_t ia = a.id, ib = b.id;
  return t.record(std::move(out), {ia, ib}, [&t, ia, ib](const Tensor<Real>& g, auto& grads) {
    if (t.requires_grad(ia)) detail::accumulate<Real>(grads, ia, g);
    if (t.requires_grad(ib)) detail::accumulate<Real>(grads, ib, g);
  });
}

template <std::floating_point Real>
Var<Real> sub(Var<Real> a, Var<Real> b) {
  auto& t = detail::same_tape(a, b);
  if (a.shape() != b.shape()) throw ShapeError("sub", a.shape(), b.shape());
  Tensor<Real> out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b.value()[i];
  const std::size_t ia = a.id, ib = b.id;
  return t.record(std::move(out), {ia, ib}, [&t, ia, ib](const Tensor<Real>& g, auto& grads) {
    if (t.requires_grad(ia)) detail::accumulate<Real>(grads, ia, g);
    if (t.requires_grad(ib)) {
      Tensor<Real> n = g;
      for (auto& v : n.storage()) v = -v;
      detail::accumulate<Real>(grads, ib, n);
    }
  });
}

/// Elementwise product.
template <std::floating_point Real>
Var<Real> mul(Var<Real> a, Var<Real> b) {
  auto& t = detail::same_tape(a, b);
  if (a.shape() != b.shape()) throw ShapeError("mul", a.shape(), b.shape());
  Tensor<Real> out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
  const std::size_t ia = a.id, ib = b.id;
  return t.record(std::move(out), {ia, ib}, [&t, ia, ib](const Tensor<Real>& g, auto& grads) {
    const auto& av = t.node(ia).value;
    const auto& bv = t.node(ib).value;
    if (t.requires_grad(ia)) {
      Tensor<Real> ga = g;
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] *= bv[i];
      detail::accumulate<Real>(grads, ia, ga);
    }
    if (t.requires_grad(ib)) {
      Tensor<Real> gb = g;
      for (std::size_t i = 0; i < gb.size(); ++i) gb[i] *= av[i];
      detail::accumulate<Real>(grads, ib, gb);
    }
  });
}

template <std::floating_point Real>
Var<Real> scale(Var<Real> a, Real k) {
  Tensor<Real> out = a.value();
  for (auto& v : out.storage()) v *= k;
  const std::size_t ia = a.id;
  return a.tape->record(std::move(out), {ia}, [ia, k](const Tensor<Real>& g, auto& grads) {
    Tensor<Real> ga = g;
    for (auto& v : ga.storage()) v *= k;
    detail::accumulate<Real>(grads, ia, ga);
  });
}

/// Quotient of two scalars.
template <std::floating_point Real>
Var<Real> div(Var<Real> a, Var<Real> b) {
  auto& t = detail::same_tape(a, b);
  if (a.value().size() != 1 || b.value().size() != 1) throw ShapeError("div", a.shape(), b.shape());
  const Real av = a.value()[0], bv = b.value()[0];
  const std::size_t ia = a.id, ib = b.id;
  return t.record(Tensor<Real>::scalar(av / bv), {ia, ib}, [&t, ia, ib, av, bv](const Tensor<Real>& g, auto& grads) {
    if (t.requires_grad(ia)) detail::accumulate<Real>(grads, ia, Tensor<Real>(t.node(ia).value.shape(), g[0] / bv));
    if (t.requires_grad(ib)) detail::accumulate<Real>(grads, ib, Tensor<Real>(t.node(ib).value.shape(), -g[0] * av / (bv * bv)));
  });
}

/// x[n,m] + b[m] broadcast over rows.
template <std::floating_point Real>
Var<Real> add_bias(Var<Real> x, Var<Real> b) {
  auto& t = detail::same_tape(x, b);
  detail::require_rank("add_bias", x, 2);
  if (b.value().rank() != 1 || b.value().dim(0) != x.value().cols()) throw ShapeError("add_bias", x.shape(), b.shape());
  Tensor<Real> out = x.value();
  const std::size_t n = out.rows(), m = out.cols();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) out(i, j) += b.value()[j];
  const std::size_t ix = x.id, ib = b.id;
  return t.record(std::move(out), {ix, ib}, [&t, ix, ib, n, m](const Tensor<Real>& g, auto& grads) {
    if (t.requires_grad(ix)) detail::accumulate<Real>(grads, ix, g);
    if (t.requires_grad(ib)) {
      Tensor<Real> gb({m});
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j) gb[j] += g(i, j);
      detail::accumulate<Real>(grads, ib, gb);
    }
  });
}

/// Row-wise softmax of a matrix.
template <std::floating_point Real>
Var<Real> softmax_rows(Var<Real> x) {
  detail::require_rank("softmax_rows", x, 2);
  const auto& xv = x.value();
  const std::size_t n = xv.rows(), m = xv.cols();
  Tensor<Real> out({n, m});
  for (std::size_t i = 0; i < n; ++i) {
    Real mx = xv(i, 0);
    for (std::size_t j = 1; j < m; ++j) mx = std::max(mx, xv(i, j));
    Real z = 0;
    for (std::size_t j = 0; j < m; ++j) z += out(i, j) = std::exp(xv(i, j) - mx);
    for (std::size_t j = 0; j < m; ++j) out(i, j) /= z;
  }
  Tensor<Real> y = out;
  const std::size_t ix = x.id;
  return x.tape->record(std::move(out), {ix}, [ix, y = std::move(y), n, m](const Tensor<Real>& g, auto& grads) {
    Tensor<Real> gx({n, m});
    for (std::size_t i = 0; i < n; ++i) {
      Real dot = 0;
      for (std::size_t j = 0; j < m; ++j) dot += g(i, j) * y(i, j);
      for (std::size_t j = 0; j < m; ++j) gx(i, j) = y(i, j) * (g(i, j) - dot);
    }
    detail::accumulate<Real>(grads, ix, gx);
  });
}

/// Per-row layer normalisation with affine gamma/beta over the last axis.
template <std::floating_point Real>
Var<Real> layernorm(Var<Real> x, Var<Real> gamma, Var<Real> beta, Real eps) {
  auto& t = detail::same_tape(x, gamma);
  detail::same_tape(x, beta);
  detail::require_rank("layernorm", x, 2);
  const auto& xv = x.value();
  const std::size_t n = xv.rows(), m = xv.cols();
  if (gamma.shape() != Shape{m}) throw ShapeError("layernorm gamma", xv.shape(), gamma.shape());
  if (beta.shape() != Shape{m}) throw ShapeError("layernorm beta", xv.shape(), beta.shape());
  Tensor<Real> xhat({n, m});
  std::vector<Real> rstd(n);
  for (std::size_t i = 0; i < n; ++i) {
    Real mu = 0;
    for (std::size_t j = 0; j < m; ++j) mu += xv(i, j);
    mu /= Real(m);
    Real var = 0;
    for (std::size_t j = 0; j < m; ++j) var += (xv(i, j) - mu) * (xv(i, j) - mu);
    var /= Real(m);
    rstd[i] = Real(1) / std::sqrt(var + eps);
    for (std::size_t j = 0; j < m; ++j) xhat(i, j) = (xv(i, j) - mu) * rstd[i];
  }
  Tensor<Real> out({n, m});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) out(i, j) = xhat(i, j) * gamma.value()[j] + beta.value()[j];
  const std::size_t ix = x.id, ig = gamma.id, ib = beta.id;
  return t.record(std::move(out), {ix, ig, ib},
                  [&t, ix, ig, ib, xhat = std::move(xhat), rstd = std::move(rstd), n, m](const Tensor<Real>& g,
                                                                                          auto& grads) {
                    const auto& gv = t.node(ig).value;
                    if (t.requires_grad(ig)) {
                      Tensor<Real> gg({m});
                      for (std::size_t i = 0; i < n; ++i)
                        for (std::size_t j = 0; j < m; ++j) gg[j] += g(i, j) * xhat(i, j);
                      detail::accumulate<Real>(grads, ig, gg);
                    }
                    if (t.requires_grad(ib)) {
                      Tensor<Real> gb({m});
                      for (std::size_t i = 0; i < n; ++i)
                        for (std::size_t j = 0; j < m; ++j) gb[j] += g(i, j);
                      detail::accumulate<Real>(grads, ib, gb);
                    }
                    if (t.requires_grad(ix)) {
                      Tensor<Real> gx({n, m});
                      std::vector<Real> dxhat(m);
                      for (std::size_t i = 0; i < n; ++i) {
                        Real s1 = 0, s2 = 0;
                        for (std::size_t j = 0; j < m; ++j) {
                          dxhat[j] = g(i, j) * gv[j];
                          s1 += dxhat[j];
                          s2 += dxhat[j] * xhat(i, j);
                        }
                        for (std::size_t j = 0; j < m; ++j)
                          gx(i, j) = rstd[i] * (dxhat[j] - s1 / Real(m) - xhat(i, j) * s2 / Real(m));
                      }
                      detail::accumulate<Real>(grads, ix, gx);
                    }
                  });
}

/// Exact (erf) GELU.
template <std::floating_point Real>
Var<Real> gelu(Var<Real> x) {
  Tensor<Real> out = x.value();
  const Real r2 = std::numbers::sqrt2_v<Real>;
  for (auto& v : out.storage()) v = Real(0.5) * v * (Real(1) + std::erf(v / r2));
  const std::size_t ix = x.id;
  return x.tape->record(std::move(out), {ix}, [ix, &t = *x.tape, r2](const Tensor<Real>& g, auto& grads) {
    const auto& xv = t.node(ix).value;
    const Real inv_sqrt_2pi = Real(1) / std::sqrt(Real(2) * std::numbers::pi_v<Real>);
    Tensor<Real> gx = g;
    for (std::size_t i = 0; i < gx.size(); ++i) {
      const Real v = xv[i];
      const Real cdf = Real(0.5) * (Real(1) + std::erf(v / r2));
      gx[i] *= cdf + v * inv_sqrt_2pi * std::exp(Real(-0.5) * v * v);
    }
    detail::accumulate<Real>(grads, ix, gx);
  });
}

/// Columns [c0, c1) of a matrix.
template <std::floating_point Real>
Var<Real> slice_cols(Var<Real> x, std::size_t c0, std::size_t c1) {
  detail::require_rank("slice_cols", x, 2);
  const auto& xv = x.value();
  const std::size_t n = xv.rows(), m = xv.cols();
  if (c0 > c1 || c1 > m) throw ShapeError("slice_cols [" + std::to_string(c0) + "," + std::to_string(c1) + ") of " + shape_str(xv.shape()));
  const std::size_t w = c1 - c0;
  Tensor<Real> out({n, w});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < w; ++j) out(i, j) = xv(i, c0 + j);
  const std::size_t ix = x.id;
  return x.tape->record(std::move(out), {ix}, [ix, n, m, c0, w](const Tensor<Real>& g, auto& grads) {
    Tensor<Real> gx({n, m});
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < w; ++j) gx(i, c0 + j) = g(i, j);
    detail::accumulate<Real>(grads, ix, gx);
  });
}

/// Rows [r0, r1) of a matrix.
template <std::floating_point Real>
Var<Real> slice_rows(Var<Real> x, std::size_t r0, std::size_t r1) {
  detail::require_rank("slice_rows", x, 2);
  const auto& xv = x.value();
  const std::size_t n = xv.rows(), m = xv.cols();
  if (r0 > r1 || r1 > n) throw ShapeError("slice_rows [" + std::to_string(r0) + "," + std::to_string(r1) + ") of " + shape_str(xv.shape()));
  std::vector<Real> d(xv.storage().begin() + r0 * m, xv.storage().begin() + r1 * m);
  const std::size_t ix = x.id;
  return x.tape->record(Tensor<Real>({r1 - r0, m}, std::move(d)), {ix}, [ix, n, m, r0](const Tensor<Real>& g, auto& grads) {
    Tensor<Real> gx({n, m});
    std::copy(g.storage().begin(), g.storage().end(), gx.storage().begin() + r0 * m);
    detail::accumulate<Real>(grads, ix, gx);
  });
}

template <std::floating_point Real>
Var<Real> concat_cols(const std::vector<Var<Real>>& parts) {
  if (parts.empty()) throw ShapeError("concat_cols of zero parts");
  auto& t = *parts[0].tape;
  const std::size_t n = parts[0].value().rows();
  std::vector<std::size_t> ids, widths;
  std::size_t m = 0;
  for (const auto& p : parts) {
    detail::same_tape(parts[0], p);
    detail::require_rank("concat_cols", p, 2);
    if (p.value().rows() != n) throw ShapeError("concat_cols", parts[0].shape(), p.shape());
    ids.push_back(p.id);
    widths.push_back(p.value().cols());
    m += p.value().cols();
  }
  Tensor<Real> out({n, m});
  std::size_t off = 0;
  for (const auto& p : parts) {
    const auto& pv = p.value();
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < pv.cols(); ++j) out(i, off + j) = pv(i, j);
    off += pv.cols();
  }
  return t.record(std::move(out), ids, [&t, ids, widths, n](const Tensor<Real>& g, auto& grads) {
    std::size_t off = 0;
    for (std::size_t k = 0; k < ids.size(); ++k) {
      if (t.requires_grad(ids[k])) {
        Tensor<Real> gp({n, widths[k]});
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < widths[k]; ++j) gp(i, j) = g(i, off + j);
        detail::accumulate<Real>(grads, ids[k], gp);
      }
      off += widths[k];
    }
  });
}

template <std::floating_point Real>
Var<Real> concat_rows(const std::vector<Var<Real>>& parts) {
  if (parts.empty()) throw ShapeError("concat_rows of zero parts");
  auto& t = *parts[0].tape;
  const std::size_t m = parts[0].value().cols();
  std::vector<std::size_t> ids, heights;
  std::vector<Real> data;
  for (const auto& p : parts) {
    detail::same_tape(parts[0], p);
    detail::require_rank("concat_rows", p, 2);
    if (p.value().cols() != m) throw ShapeError("concat_rows", parts[0].shape(), p.shape());
    ids.push_back(p.id);
    heights.push_back(p.value().rows());
    data.insert(data.end(), p.value().storage().begin(), p.value().storage().end());
  }
  const std::size_t n = data.size() / std::max<std::size_t>(m, 1);
  return t.record(Tensor<Real>({n, m}, std::move(data)), ids, [&t, ids, heights, m](const Tensor<Real>& g, auto& grads) {
    std::size_t off = 0;
    for (std::size_t k = 0; k < ids.size(); ++k) {
      const std::size_t len = heights[k] * m;
      if (t.requires_grad(ids[k])) {
        std::vector<Real> d(g.storage().begin() + off, g.storage().begin() + off + len);
        detail::accumulate<Real>(grads, ids[k], Tensor<Real>({heights[k], m}, std::move(d)));
      }
      off += len;
    }
  });
}

/// Single element of any tensor, as a scalar.
template <std::floating_point Real>
Var<Real> element(Var<Real> x, std::size_t index) {
  const auto& xv = x.value();
  if (index >= xv.size()) throw ShapeError("element " + std::to_string(index) + " of " + shape_str(xv.shape()));
  const std::size_t ix = x.id;
  Shape s = xv.shape();
  return x.tape->record(Tensor<Real>::scalar(xv[index]), {ix}, [ix, index, s](const Tensor<Real>& g, auto& grads) {
    Tensor<Real> gx(s);
    gx[index] = g[0];
    detail::accumulate<Real>(grads, ix, gx);
  });
}

template <std::floating_point Real>
Var<Real> sum(Var<Real> x) {
  const auto& xv = x.value();
  Real s = 0;
  for (Real v : xv.data()) s += v;
  const std::size_t ix = x.id;
  Shape sh = xv.shape();
  return x.tape->record(Tensor<Real>::scalar(s), {ix}, [ix, sh](const Tensor<Real>& g, auto& grads) {
    detail::accumulate<Real>(grads, ix, Tensor<Real>(sh, g[0]));
  });
}

/// Image [H,W,C] to patch rows [N, P*P*C]. Patches in row-major grid order;
/// inside a patch the layout is (dy, dx, channel).
template <std::floating_point Real>
Var<Real> patchify(Var<Real> image, std::size_t patch) {
  detail::require_rank("patchify", image, 3);
  const auto& iv = image.value();
  const std::size_t h = iv.dim(0), w = iv.dim(1), c = iv.dim(2);
  if (patch == 0 || h % patch || w % patch)
    throw ShapeError("patchify: image " + shape_str(iv.shape()) + " not divisible by patch " + std::to_string(patch));
  const std::size_t gh = h / patch, gw = w / patch, row = patch * patch * c;
  std::vector<std::size_t> src(gh * gw * row);
  for (std::size_t py = 0; py < gh; ++py)
    for (std::size_t px = 0; px < gw; ++px)
      for (std::size_t dy = 0; dy < patch; ++dy)
        for (std::size_t dx = 0; dx < patch; ++dx)
          for (std::size_t ch = 0; ch < c; ++ch) {
            const std::size_t p = py * gw + px;
            const std::size_t k = (dy * patch + dx) * c + ch;
            src[p * row + k] = ((py * patch + dy) * w + (px * patch + dx)) * c + ch;
          }
  Tensor<Real> out({gh * gw, row});
  for (std::size_t i = 0; i < src.size(); ++i) out[i] = iv[src[i]];
  const std::size_t ix = image.id;
  Shape sh = iv.shape();
  return image.tape->record(std::move(out), {ix}, [ix, sh, src = std::move(src)](const Tensor<Real>& g, auto& grads) {
    Tensor<Real> gx(sh);
    for (std::size_t i = 0; i < src.size(); ++i) gx[src[i]] += g[i];
    detail::accumulate<Real>(grads, ix, gx);
  });
}

}  // namespace attnguide
