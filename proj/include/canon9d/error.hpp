#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace canon9d {

enum class Errc {
  BadMagic,
  TruncatedFile,
  DimensionMismatch,
  InvalidFeature,
  DuplicateId,
  UnknownStatus,
  MissingFile,
  ParseError,
  UnknownObject,
  IllegalTransition,
  EmptyInput,
  DegenerateMean,
  TooFewPoints,
  EmptyCluster,
  NoFeatures,
  DegenerateWeights,
  TooFewCorrespondences,
  DegenerateSample,
  NonFiniteObjective,
  DegenerateExtent,
  UnknownRule,
  MissingPrediction,
  NoVerifiedReference,
  EmptyPending,
  InvalidArgument,
  Io,
};

std::string_view to_string(Errc code);

/// Every failure raised by the library carries one of the codes above so that
/// callers (CLI exit codes, HTTP status mapping, tests) can dispatch on it.
class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

}  // namespace canon9d
