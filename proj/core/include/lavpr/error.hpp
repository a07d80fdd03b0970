#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace lavpr {

enum class ErrorCode {
  kInvalidArgument,
  kDimensionMismatch,
  kNonFinite,
  kEmptyInput,
  // storage
  kBadMagic,
  kVersionMismatch,
  kKindMismatch,
  kTruncated,
  kBadMetadata,
  kIo,
  // manifest
  kDuplicateRecord,
  kDanglingReference,
  kNoDatabaseMembers,
  // datagen / trainer
  kUnknownRecord,
  kInsufficientPlaces,
  kNanLoss,
  // fusion / lora / retrieval / analysis
  kNoPoolableTokens,
  kRankViolation,
  kSequenceTooLong,
  kEmptyQuerySet,
  kMissingQuery,
  kMissingModality,
  kInconsistentK,
};

std::string_view to_string(ErrorCode code);

/// Exception carrying a machine-readable code. All library failures surface as
/// this type so callers (and the CLI) can dispatch on `code()`.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace lavpr
