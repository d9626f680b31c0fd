#pragma once

#include <charconv>
#include <cmath>
#include <string>
#include <string_view>

#include "attnguide/tape.hpp"

namespace attnguide {

/// Scalar objectives over logits. ratio is logit[c1] / logit[c2];
/// normalized_diff is (logit[c1] - logit[c2]) / logit[c1].
struct LossSpec {
  enum class Kind { single_logit, diff, ratio, normalized_diff };

  Kind kind = Kind::single_logit;
  std::size_t c1 = 0;
  std::size_t c2 = 0;

  static LossSpec single(std::size_t c) { return {Kind::single_logit, c, c}; }
  static LossSpec difference(std::size_t a, std::size_t b) { return {Kind::diff, a, b}; }
  static LossSpec ratio(std::size_t a, std::size_t b) { return {Kind::ratio, a, b}; }
  static LossSpec normalized_diff(std::size_t a, std::size_t b) { return {Kind::normalized_diff, a, b}; }

  bool two_class() const { return kind != Kind::single_logit; }

  void validate(std::size_t num_classes) const {
    if (c1 >= num_classes || (two_class() && c2 >= num_classes))
      throw PreconditionError("loss " + str() + ": class index out of range for " + std::to_string(num_classes) +
                              " classes");
    if (two_class() && c1 == c2) throw PreconditionError("loss " + str() + ": classes must differ");
  }

  /// Inverse of parse(): single:C, diff:A,B, ratio:A,B, ndiff:A,B.
  std::string str() const {
    switch (kind) {
      case Kind::single_logit: return "single:" + std::to_string(c1);
      case Kind::diff: return "diff:" + std::to_string(c1) + "," + std::to_string(c2);
      case Kind::ratio: return "ratio:" + std::to_string(c1) + "," + std::to_string(c2);
      case Kind::normalized_diff: return "ndiff:" + std::to_string(c1) + "," + std::to_string(c2);
    }
    return {};
  }

  static LossSpec parse(std::string_view text) {
    auto bad = [&] { return Error(ErrorCategory::usage, "bad loss '" + std::string(text) + "' (want single:C, diff:A,B, ratio:A,B or ndiff:A,B)"); };
    const auto colon = text.find(':');
    if (colon == std::string_view::npos) throw bad();
    const auto name = text.substr(0, colon);
    const auto args = text.substr(colon + 1);
    auto num = [&](std::string_view s) {
      std::size_t v = 0;
      auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
      if (ec != std::errc{} || ptr != s.data() + s.size() || s.empty()) throw bad();
      return v;
    };
    if (name == "single") return single(num(args));
    const auto comma = args.find(',');
    if (comma == std::string_view::npos) throw bad();
    const std::size_t a = num(args.substr(0, comma)), b = num(args.substr(comma + 1));
    LossSpec out;
    if (name == "diff") out = difference(a, b);
    else if (name == "ratio") out = ratio(a, b);
    else if (name == "ndiff") out = normalized_diff(a, b);
    else throw bad();
    if (a == b) throw PreconditionError("loss " + out.str() + ": classes must differ");
    return out;
  }

  friend bool operator==(const LossSpec&, const LossSpec&) = default;
};

namespace detail {
template <std::floating_point Real>
void check_denominator(std::size_t cls, Real v) {
  if (std::abs(v) < Real(1e-8)) throw DegenerateDenominator(cls, double(v));
}
}  // namespace detail

template <std::floating_point Real>
Real eval_loss(const Tensor<Real>& logits, const LossSpec& spec) {
  if (!logits.all_finite()) throw DataError("non-finite logits");
  spec.validate(logits.size());
  const Real a = logits[spec.c1];
  const Real b = spec.two_class() ? logits[spec.c2] : Real(0);
  switch (spec.kind) {
    case LossSpec::Kind::single_logit: return a;
    case LossSpec::Kind::diff: return a - b;
    case LossSpec::Kind::ratio: detail::check_denominator(spec.c2, b); return a / b;
    case LossSpec::Kind::normalized_diff: detail::check_denominator(spec.c1, a); return (a - b) / a;
  }
  return a;
}

/// Same loss recorded on the tape.
template <std::floating_point Real>
Var<Real> eval_loss(Var<Real> logits, const LossSpec& spec) {
  const auto& lv = logits.value();
  spec.validate(lv.size());
  Var<Real> a = element(logits, spec.c1);
  if (!spec.two_class()) return a;
  Var<Real> b = element(logits, spec.c2);
  switch (spec.kind) {
    case LossSpec::Kind::diff: return sub(a, b);
    case LossSpec::Kind::ratio: detail::check_denominator(spec.c2, lv[spec.c2]); return div(a, b);
    case LossSpec::Kind::normalized_diff: detail::check_denominator(spec.c1, lv[spec.c1]); return div(sub(a, b), a);
    default: return a;
  }
}

}  // namespace attnguide
