#pragma once

#include <stdexcept>
#include <string>

namespace mvd {

/// Base of every error raised by the library. `kind()` names the failure
/// class so callers (and the CLI) can branch without RTTI gymnastics.
class Error : public std::runtime_error {
 public:
  Error(std::string kind, const std::string& what)
      : std::runtime_error(kind + ": " + what), kind_(std::move(kind)) {}

  const std::string& kind() const noexcept { return kind_; }

 private:
  std::string kind_;
};

#define MVD_DEFINE_ERROR(Name)                                      \
  class Name : public Error {                                       \
   public:                                                          \
    explicit Name(const std::string& what) : Error(#Name, what) {} \
  }

MVD_DEFINE_ERROR(DegenerateCloud);
MVD_DEFINE_ERROR(UnsupportedCount);
MVD_DEFINE_ERROR(PointAtViewpoint);
MVD_DEFINE_ERROR(RadiusTooSmall);
MVD_DEFINE_ERROR(ShapeMismatch);
MVD_DEFINE_ERROR(EmptyInput);
MVD_DEFINE_ERROR(LabelOutOfRange);
MVD_DEFINE_ERROR(NonFiniteLoss);
MVD_DEFINE_ERROR(NonFiniteValue);
MVD_DEFINE_ERROR(IndexOutOfRange);
MVD_DEFINE_ERROR(MissingTeacherField);
MVD_DEFINE_ERROR(MissingTeacher);
MVD_DEFINE_ERROR(IoError);
MVD_DEFINE_ERROR(BadMagic);
MVD_DEFINE_ERROR(UnsupportedVersion);
MVD_DEFINE_ERROR(TruncatedFile);
MVD_DEFINE_ERROR(InvalidArgument);

#undef MVD_DEFINE_ERROR

/// Affinely dependent input to the hull builder; `rank` is the affine
/// dimension that was found (0 = coincident, 1 = collinear, 2 = coplanar).
class DegenerateHull : public Error {
 public:
  DegenerateHull(int rank, const std::string& what)
      : Error("Degenerate", what), rank_(rank) {}
  int rank() const noexcept { return rank_; }

 private:
  int rank_;
};

class ParseError : public Error {
 public:
  ParseError(std::size_t line, const std::string& what)
      : Error("ParseError", "line " + std::to_string(line) + ": " + what),
        line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

}  // namespace mvd
