// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace muxnet {

enum class Errc {
  NonFiniteWeight,
  EnumerationTooLarge,
  ModeMismatch,
  OddSplitUnsupported,
  BadLineIndex,
  AccumulatorOverflow,
  ActivationOutOfRange,
  ShapeError,
  BadBNParams,
  UnsupportedLayer,
  BadArtifact,
  CorruptArtifact,
  SegmentLengthError,
  VoteAfterDecision,
  LoopConfigError,
  InvalidArgument,
  IoError,
};

constexpr std::string_view to_string(Errc code) noexcept {
  switch (code) {
    case Errc::NonFiniteWeight: return "NonFiniteWeight";
    case Errc::EnumerationTooLarge: return "EnumerationTooLarge";
    case Errc::ModeMismatch: return "ModeMismatch";
    case Errc::OddSplitUnsupported: return "OddSplitUnsupported";
    case Errc::BadLineIndex: return "BadLineIndex";
    case Errc::AccumulatorOverflow: return "AccumulatorOverflow";
    case Errc::ActivationOutOfRange: return "ActivationOutOfRange";
    case Errc::ShapeError: return "ShapeError";
    case Errc::BadBNParams: return "BadBNParams";
    case Errc::UnsupportedLayer: return "UnsupportedLayer";
    case Errc::BadArtifact: return "BadArtifact";
    case Errc::CorruptArtifact: return "CorruptArtifact";
    case Errc::SegmentLengthError: return "SegmentLengthError";
    case Errc::VoteAfterDecision: return "VoteAfterDecision";
    case Errc::LoopConfigError: return "LoopConfigError";
    case Errc::InvalidArgument: return "InvalidArgument";
    case Errc::IoError: return "IoError";
  }
  return "Unknown";
}

/// Every failure raised by the library carries one of the named codes above;
/// `what()` is "<Code>: <detail>".
class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& detail)
      : std::runtime_error(std::string(to_string(code)) + ": " + detail), code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

[[noreturn]] inline void fail(Errc code, const std::string& detail) { throw Error(code, detail); }

inline void require(bool cond, Errc code, const std::string& detail) {
  if (!cond) fail(code, detail);
}

}  // namespace muxnet
