#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace scarbench {

enum class Errc {
  FileMissing,
  MalformedHeader,
  UnsupportedDepth,
  ParseError,
  InvalidGeometry,
  DuplicateCase,
  InvalidTarget,
  InvalidParameter,
  DimensionMismatch,
  EmptyMask,
  EmptyTarget,
  EmptyROI,
  ROIOutsideMyocardium,
  InvalidRatios,
  EmptyCohort,
  EmptyInput,
  EmptySample,
  IoError,
};

constexpr std::string_view to_string(Errc code) noexcept {
  switch (code) {
    case Errc::FileMissing: return "FileMissing";
    case Errc::MalformedHeader: return "MalformedHeader";
    case Errc::UnsupportedDepth: return "UnsupportedDepth";
    case Errc::ParseError: return "ParseError";
    case Errc::InvalidGeometry: return "InvalidGeometry";
    case Errc::DuplicateCase: return "DuplicateCase";
    case Errc::InvalidTarget: return "InvalidTarget";
    case Errc::InvalidParameter: return "InvalidParameter";
    case Errc::DimensionMismatch: return "DimensionMismatch";
    case Errc::EmptyMask: return "EmptyMask";
    case Errc::EmptyTarget: return "EmptyTarget";
    case Errc::EmptyROI: return "EmptyROI";
    case Errc::ROIOutsideMyocardium: return "ROIOutsideMyocardium";
    case Errc::InvalidRatios: return "InvalidRatios";
    case Errc::EmptyCohort: return "EmptyCohort";
    case Errc::EmptyInput: return "EmptyInput";
    case Errc::EmptySample: return "EmptySample";
    case Errc::IoError: return "IoError";
  }
  return "Unknown";
}

/// Exception thrown by every fallible operation in the library. The code is
/// the machine-readable part; what() carries a human diagnostic.
class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

}  // namespace scarbench
