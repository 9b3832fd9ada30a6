#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace cx {

enum class ErrorCode {
  // ingest
  MalformedLine,
  DuplicateFeatureId,
  EmptyExplanation,
  ShapeMismatch,
  NonFiniteValue,
  TruncatedFile,
  BadMagic,
  ZeroEmbeddingRow,
  // neighbor graph
  KTooLarge,
  KTooSmall,
  MetricUndefined,
  EmptyRow,
  // hierarchy
  TooManyLandmarks,
  LevelTooSmall,
  InvalidConfig,
  AllZeroR,
  // layout
  FitDiverged,
  InvalidArgument,
  NonFinitePosition,
  UnknownLandmark,
  EmptySelection,
  // analytics
  MTooLarge,
  BadLevel,
  // store
  IoError,
  SerializationError,
  ChecksumMismatch,
  VersionUnsupported,
  MissingPayload,
  UnknownScope,
  // service
  NotLoaded,
  UnknownFeature,
  BadVectorDim,
  BudgetExceeded,
  BadRequest,
  NotFound,
  Internal,
};

std::string_view to_string(ErrorCode code);

/// Every failure raised by the library. `details` carries the integer
/// arguments of the failure (line number, offending id, found/expected shape).
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message, std::vector<std::int64_t> details = {});

  ErrorCode code() const noexcept { return code_; }
  const std::vector<std::int64_t>& details() const noexcept { return details_; }

 private:
  ErrorCode code_;
  std::vector<std::int64_t> details_;
};

}  // namespace cx
