#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace progsearch {

enum class ErrorCode {
  kInput,        // malformed user input: bad query, bad file contents
  kConfig,       // configuration references something that does not exist
  kNotFound,     // missing file or unknown identifier
  kConflict,     // exclusivity violated (build already running)
  kUnavailable,  // component not built yet
  kMismatch,     // schema fingerprint mismatch between components
  kInternal,
};

std::string_view to_string(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace progsearch
