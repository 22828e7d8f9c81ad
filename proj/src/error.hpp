#pragma once

#include <stdexcept>
#include <string>

namespace retriever {

// Numeric values are shared with the C API status codes and the CLI exit
// codes, so they must stay stable.
enum class ErrorCode : int {
  kInvalidArgument = 1,
  kConfig = 2,
  kNumeric = 3,
  kArtifact = 4,
  kShape = 5,
  kState = 6,
  kIo = 7,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(what), code_(code) {}
  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) {
  throw Error(code, what);
}

}  // namespace retriever
