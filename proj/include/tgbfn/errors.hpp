#pragma once

#include <stdexcept>
#include <string>

namespace tgbfn {

// Thrown when a computation degenerates numerically (all-zero weight batches,
// NaN in a forward pass, ...). Distinct from invalid-argument so callers can
// map the two to different exit statuses.
class NumericalFailure : public std::runtime_error {
 public:
  explicit NumericalFailure(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace tgbfn
