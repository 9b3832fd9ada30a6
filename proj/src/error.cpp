#include "cx/error.hpp"

namespace cx {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::MalformedLine: return "MalformedLine";
    case ErrorCode::DuplicateFeatureId: return "DuplicateFeatureId";
    case ErrorCode::EmptyExplanation: return "EmptyExplanation";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::NonFiniteValue: return "NonFiniteValue";
    case ErrorCode::TruncatedFile: return "TruncatedFile";
    case ErrorCode::BadMagic: return "BadMagic";
    case ErrorCode::ZeroEmbeddingRow: return "ZeroEmbeddingRow";
    case ErrorCode::KTooLarge: return "KTooLarge";
    case ErrorCode::KTooSmall: return "KTooSmall";
    case ErrorCode::MetricUndefined: return "MetricUndefined";
    case ErrorCode::EmptyRow: return "EmptyRow";
    case ErrorCode::TooManyLandmarks: return "TooManyLandmarks";
    case ErrorCode::LevelTooSmall: return "LevelTooSmall";
    case ErrorCode::InvalidConfig: return "InvalidConfig";
    case ErrorCode::AllZeroR: return "AllZeroR";
    case ErrorCode::FitDiverged: return "FitDiverged";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::NonFinitePosition: return "NonFinitePosition";
    case ErrorCode::UnknownLandmark: return "UnknownLandmark";
    case ErrorCode::EmptySelection: return "EmptySelection";
    case ErrorCode::MTooLarge: return "MTooLarge";
    case ErrorCode::BadLevel: return "BadLevel";
    case ErrorCode::IoError: return "IoError";
    case ErrorCode::SerializationError: return "SerializationError";
    case ErrorCode::ChecksumMismatch: return "ChecksumMismatch";
    case ErrorCode::VersionUnsupported: return "VersionUnsupported";
    case ErrorCode::MissingPayload: return "MissingPayload";
    case ErrorCode::UnknownScope: return "UnknownScope";
    case ErrorCode::NotLoaded: return "NotLoaded";
    case ErrorCode::UnknownFeature: return "UnknownFeature";
    case ErrorCode::BadVectorDim: return "BadVectorDim";
    case ErrorCode::BudgetExceeded: return "BudgetExceeded";
    case ErrorCode::BadRequest: return "BadRequest";
    case ErrorCode::NotFound: return "NotFound";
    case ErrorCode::Internal: return "Internal";
  }
  return "Unknown";
}

Error::Error(ErrorCode code, const std::string& message, std::vector<std::int64_t> details)
    : std::runtime_error(std::string(to_string(code)) + ": " + message),
      code_(code),
      details_(std::move(details)) {}

}  // namespace cx
