#include "gridcascade/errors.hpp"

namespace gridcascade {

std::string_view category_name(ErrorCategory c) {
  switch (c) {
    case ErrorCategory::kInvalidGrid: return "invalid-grid";
    case ErrorCategory::kParse: return "parse";
    case ErrorCategory::kInvalidSample: return "invalid-sample";
    case ErrorCategory::kSolver: return "solver";
    case ErrorCategory::kShape: return "shape";
    case ErrorCategory::kNumeric: return "numeric";
    case ErrorCategory::kLabelOverflow: return "label-overflow";
    case ErrorCategory::kDataset: return "dataset";
    case ErrorCategory::kCheckpoint: return "checkpoint";
    case ErrorCategory::kConfig: return "config";
    case ErrorCategory::kMissingArtifact: return "missing-artifact";
    case ErrorCategory::kEvaluation: return "evaluation";
  }
  return "unknown";
}

}  // namespace gridcascade
