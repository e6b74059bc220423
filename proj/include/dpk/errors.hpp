#pragma once

#include <stdexcept>
#include <string>

namespace dpk {

struct InvalidInputError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ShapeError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct SizeError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Thrown by cka_minibatch when a denominator mean is <= 0; callers fall
// back to the previous valid ratio.
struct DegenerateBatchError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace dpk
