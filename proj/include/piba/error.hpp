#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace piba {

enum class ErrorKind {
  shape,
  numeric,
  invalid_argument,
  undefined_correlation,
  bad_magic,
  bad_version,
  truncated,
  format,
  validation,
  config,
  missing_artifact,
  io,
};

std::string_view to_string(ErrorKind kind);

// Single exception type for the whole library; callers branch on kind().
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message, std::string stage = {})
      : std::runtime_error(message), kind_(kind), stage_(std::move(stage)) {}

  ErrorKind kind() const noexcept { return kind_; }
  const std::string& stage() const noexcept { return stage_; }

  // Re-tags an error raised inside a pipeline stage.
  Error in_stage(const std::string& stage) const {
    return Error(kind_, stage + ": " + what(), stage);
  }

 private:
  ErrorKind kind_;
  std::string stage_;
};

}  // namespace piba
