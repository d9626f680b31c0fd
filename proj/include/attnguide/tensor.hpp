#pragma once

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <utility>
#include <vector>

#include "attnguide/error.hpp"

namespace attnguide {

inline std::size_t shape_size(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>{});
}

/// Dense row-major array. Rank 0 is a scalar holding one value.
template <std::floating_point Real>
class Tensor {
 public:
  using value_type = Real;

  Tensor() = default;
  explicit Tensor(Shape shape, Real fill = Real(0))
      : shape_(std::move(shape)), data_(shape_size(shape_), fill) {}
  Tensor(Shape shape, std::vector<Real> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != shape_size(shape_))
      throw ShapeError("tensor: " + std::to_string(data_.size()) + " values for shape " +
                       shape_str(shape_));
  }

  static Tensor scalar(Real v) { return Tensor(Shape{}, std::vector<Real>{v}); }

  static Tensor identity(std::size_t n) {
    Tensor t({n, n});
    for (std::size_t i = 0; i < n; ++i) t(i, i) = Real(1);
    return t;
  }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t rows() const { return shape_.at(0); }
  std::size_t cols() const { return shape_.at(1); }

  std::span<Real> data() noexcept { return data_; }
  std::span<const Real> data() const noexcept { return data_; }
  std::vector<Real>& storage() noexcept { return data_; }
  const std::vector<Real>& storage() const noexcept { return data_; }

  Real& operator[](std::size_t i) { return data_[i]; }
  const Real& operator[](std::size_t i) const { return data_[i]; }

  Real& operator()(std::size_t i, std::size_t j) { return data_[i * shape_[1] + j]; }
  const Real& operator()(std::size_t i, std::size_t j) const { return data_[i * shape_[1] + j]; }
  Real& operator()(std::size_t i, std::size_t j, std::size_t k) {
    return data_[(i * shape_[1] + j) * shape_[2] + k];
  }
  const Real& operator()(std::size_t i, std::size_t j, std::size_t k) const {
    return data_[(i * shape_[1] + j) * shape_[2] + k];
  }
  Real& operator()(std::size_t i, std::size_t j, std::size_t k, std::size_t l) {
    return data_[((i * shape_[1] + j) * shape_[2] + k) * shape_[3] + l];
  }
  const Real& operator()(std::size_t i, std::size_t j, std::size_t k, std::size_t l) const {
    return data_[((i * shape_[1] + j) * shape_[2] + k) * shape_[3] + l];
  }

  Real item() const {
    if (data_.size() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape_));
    return data_[0];
  }

  /// Sub-tensor along the leading axis (copies).
  Tensor slice(std::size_t index) const {
    if (shape_.empty() || index >= shape_[0]) throw ShapeError("slice index out of range");
    Shape inner(shape_.begin() + 1, shape_.end());
    const std::size_t n = shape_size(inner);
    return Tensor(inner, std::vector<Real>(data_.begin() + index * n, data_.begin() + (index + 1) * n));
  }

  Tensor reshaped(Shape s) const {
    if (shape_size(s) != data_.size()) throw ShapeError("reshape", shape_, s);
    return Tensor(std::move(s), data_);
  }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](Real v) { return std::isfinite(v); });
  }

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  Shape shape_;
  std::vector<Real> data_;
};

/// Stacks equally shaped tensors along a new leading axis.
template <std::floating_point Real>
Tensor<Real> stack(std::span<const Tensor<Real>> parts) {
  if (parts.empty()) throw ShapeError("stack of zero tensors");
  Shape s{parts.size()};
  s.insert(s.end(), parts[0].shape().begin(), parts[0].shape().end());
  std::vector<Real> data;
  data.reserve(shape_size(s));
  for (const auto& p : parts) {
    if (p.shape() != parts[0].shape()) throw ShapeError("stack", parts[0].shape(), p.shape());
    data.insert(data.end(), p.data().begin(), p.data().end());
  }
  return Tensor<Real>(std::move(s), std::move(data));
}

template <std::floating_point Real>
Tensor<Real> stack(const std::vector<Tensor<Real>>& parts) {
  return stack(std::span<const Tensor<Real>>(parts));
}

/// Plain 2-D matrix product.
template <std::floating_point Real>
Tensor<Real> matmul(const Tensor<Real>& a, const Tensor<Real>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.cols() != b.rows()) throw ShapeError("matmul", a.shape(), b.shape());
  const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
  Tensor<Real> out({n, m});
  for (std::size_t i = 0; i < n; ++i) {
    Real* row = &out(i, 0);
    for (std::size_t p = 0; p < k; ++p) {
      const Real av = a(i, p);
      if (av == Real(0)) continue;
      const Real* brow = &b(p, 0);
      for (std::size_t j = 0; j < m; ++j) row[j] += av * brow[j];
    }
  }
  return out;
}

template <std::floating_point Real>
Tensor<Real> transpose(const Tensor<Real>& a) {
  if (a.rank() != 2) throw ShapeError("transpose of rank-" + std::to_string(a.rank()) + " tensor");
  Tensor<Real> out({a.cols(), a.rows()});
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) out(j, i) = a(i, j);
  return out;
}

template <std::floating_point Real>
Real max_abs(const Tensor<Real>& a) {
  Real m = 0;
  for (Real v : a.data()) m = std::max(m, std::abs(v));
  return m;
}

template <std::floating_point Real>
Real max_abs_diff(const Tensor<Real>& a, const Tensor<Real>& b) {
  if (a.shape() != b.shape()) throw ShapeError("max_abs_diff", a.shape(), b.shape());
  Real m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace attnguide
