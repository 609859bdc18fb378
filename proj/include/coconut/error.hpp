#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace coconut {

enum class ErrorCode {
  NonDivisibleLength,
  LengthMismatch,
  BitsOutOfRange,
  WidthMismatch,
  SegmentCountMismatch,
  InvalidArgument,
  StorageFull,
  IoFailure,
  BudgetTooSmall,
  CorruptRun,
  EmptyInput,
  EmptyIndex,
  EmptyWindowResult,
  OutOfOrderArrival,
  InvalidProfile,
  UnknownQueryId,
};

std::string_view to_string(ErrorCode code) noexcept;

/// Single exception type for the library; callers branch on code().
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace coconut
