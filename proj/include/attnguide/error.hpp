#pragma once

#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace attnguide {

/// Broad error families. The CLI maps `usage` and `precondition` to exit
/// code 1 and everything else to exit code 2.
enum class ErrorCategory {
  usage,
  precondition,
  shape,
  degenerate,
  format,
  decode,
  io,
  data,
};

inline const char* to_string(ErrorCategory c) {
  switch (c) {
    case ErrorCategory::usage: return "usage";
    case ErrorCategory::precondition: return "precondition";
    case ErrorCategory::shape: return "shape";
    case ErrorCategory::degenerate: return "degenerate";
    case ErrorCategory::format: return "format";
    case ErrorCategory::decode: return "decode";
    case ErrorCategory::io: return "io";
    case ErrorCategory::data: return "data";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCategory category, const std::string& what)
      : std::runtime_error(what), category_(category) {}

  ErrorCategory category() const noexcept { return category_; }

 private:
  ErrorCategory category_;
};

using Shape = std::vector<std::size_t>;

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ']';
  return os.str();
}

class ShapeError : public Error {
 public:
  ShapeError(const std::string& op, const Shape& a, const Shape& b)
      : Error(ErrorCategory::shape,
              op + ": shape mismatch " + shape_str(a) + " vs " + shape_str(b)),
        lhs(a),
        rhs(b) {}
  explicit ShapeError(const std::string& what) : Error(ErrorCategory::shape, what) {}

  Shape lhs, rhs;
};

class PreconditionError : public Error {
 public:
  explicit PreconditionError(const std::string& what)
      : Error(ErrorCategory::precondition, what) {}
};

/// Ratio-style losses whose denominator logit is (numerically) zero.
class DegenerateDenominator : public Error {
 public:
  DegenerateDenominator(std::size_t cls, double value)
      : Error(ErrorCategory::degenerate,
              "degenerate denominator: |logit[" + std::to_string(cls) + "]| = " +
                  std::to_string(value) + " < 1e-8"),
        class_index(cls) {}

  std::size_t class_index;
};

/// Weight-container parse failures. Each kind is distinguishable by callers.
class FormatError : public Error {
 public:
  enum class Kind { bad_header, bad_offset, missing_tensor, shape_mismatch, truncated, bad_dtype };

  FormatError(Kind kind, const std::string& what) : Error(ErrorCategory::format, what), kind_(kind) {}

  Kind kind() const noexcept { return kind_; }

 private:
  Kind kind_;
};

/// Image decoding failures: unrecognised container vs damaged stream.
class DecodeError : public Error {
 public:
  enum class Kind { unknown_format, corrupt_stream };

  DecodeError(Kind kind, const std::string& what) : Error(ErrorCategory::decode, what), kind_(kind) {}

  Kind kind() const noexcept { return kind_; }

 private:
  Kind kind_;
};

class IoError : public Error {
 public:
  explicit IoError(const std::string& what) : Error(ErrorCategory::io, what) {}
};

class DataError : public Error {
 public:
  explicit DataError(const std::string& what) : Error(ErrorCategory::data, what) {}
};

}  // namespace attnguide
