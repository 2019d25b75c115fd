#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace pu {

enum class ErrorKind {
  InvalidInput,
  EmptyAnswer,
  Timeout,
  MalformedResponse,
  RateLimited,
  BackendUnsupported,
  TokenizationMismatch,
  JudgeUnparseable,
  DimensionMismatch,
  OfflineViolation,
  Diverged,
  MissingUnconditional,
  EmptySampleSet,
  EmptyPassageSet,
  SingleClass,
  DegenerateVariance,
  EmptyKeep,
  AlignmentMismatch,
  MissingJoin,
  CostMismatch,
  Io,
};

std::string_view to_string(ErrorKind kind);

// Single exception type for the toolkit; callers branch on kind().
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

  [[nodiscard]] ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

// True for failures worth retrying against a remote service.
inline bool is_transient(ErrorKind kind) {
  return kind == ErrorKind::Timeout || kind == ErrorKind::RateLimited;
}

}  // namespace pu
