#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace sirenmap {

/// Base of every error raised by the library. `kind()` is a stable,
/// machine-readable tag used by the CLI error line.
class Error : public std::runtime_error {
 public:
  Error(std::string kind, const std::string& what)
      : std::runtime_error(what), kind_(std::move(kind)) {}
  const std::string& kind() const noexcept { return kind_; }

 private:
  std::string kind_;
};

#define SIRENMAP_DEFINE_ERROR(Name)                                    \
  class Name : public Error {                                          \
   public:                                                             \
    explicit Name(const std::string& what) : Error(#Name, what) {}     \
  };

SIRENMAP_DEFINE_ERROR(DegenerateGrid)
SIRENMAP_DEFINE_ERROR(IoError)
SIRENMAP_DEFINE_ERROR(MalformedFile)
SIRENMAP_DEFINE_ERROR(ChecksumMismatch)
SIRENMAP_DEFINE_ERROR(GeometryMismatch)
SIRENMAP_DEFINE_ERROR(InvalidCovariance)
SIRENMAP_DEFINE_ERROR(DegenerateBelief)
SIRENMAP_DEFINE_ERROR(DomainError)
SIRENMAP_DEFINE_ERROR(InvalidArgument)
SIRENMAP_DEFINE_ERROR(NoPathFound)
SIRENMAP_DEFINE_ERROR(InsufficientData)
SIRENMAP_DEFINE_ERROR(EmptyGroup)
SIRENMAP_DEFINE_ERROR(FixtureMissing)

#undef SIRENMAP_DEFINE_ERROR

/// A world point fell outside the grid extent.
class OutOfBounds : public Error {
 public:
  OutOfBounds(double x, double y)
      : Error("OutOfBounds", "point (" + std::to_string(x) + ", " +
                                 std::to_string(y) + ") is outside the grid"),
        x_(x),
        y_(y) {}
  double x() const noexcept { return x_; }
  double y() const noexcept { return y_; }

 private:
  double x_;
  double y_;
};

/// The Gauss inequality was asked for outside 0 < s_i <= 4 sigma_i / sqrt(3).
class BoundDomainViolation : public Error {
 public:
  explicit BoundDomainViolation(std::vector<std::size_t> axes)
      : Error("BoundDomainViolation", describe(axes)), axes_(std::move(axes)) {}
  const std::vector<std::size_t>& axes() const noexcept { return axes_; }

 private:
  static std::string describe(const std::vector<std::size_t>& axes) {
    std::string s = "rectangle side exceeds 4*sigma/sqrt(3) on axes:";
    for (auto a : axes) s += " " + std::to_string(a);
    return s;
  }
  std::vector<std::size_t> axes_;
};

}  // namespace sirenmap
