#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace gridcascade {

/// Coarse error classes. The CLI prints `error[<category>]: <message>` and
/// maps each category to its own exit code.
enum class ErrorCategory {
  kInvalidGrid,
  kParse,
  kInvalidSample,
  kSolver,
  kShape,
  kNumeric,
  kLabelOverflow,
  kDataset,
  kCheckpoint,
  kConfig,
  kMissingArtifact,
  kEvaluation,
};

std::string_view category_name(ErrorCategory c);

class Error : public std::runtime_error {
 public:
  Error(ErrorCategory category, const std::string& what)
      : std::runtime_error(what), category_(category) {}

  ErrorCategory category() const noexcept { return category_; }

 private:
  ErrorCategory category_;
};

[[noreturn]] inline void fail(ErrorCategory c, const std::string& what) {
  throw Error(c, what);
}

}  // namespace gridcascade
