#pragma once

#include <stdexcept>
#include <string>

namespace laser {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Token id out of range, malformed record, shape mismatch.
struct InputError : Error {
  using Error::Error;
};

// Sequence longer than the policy's context capacity.
struct CapacityError : Error {
  using Error::Error;
};

struct ConfigError : Error {
  using Error::Error;
};

struct CheckpointError : Error {
  using Error::Error;
};

// Raised when a loss or gradient stops being finite during training.
struct NonFiniteError : Error {
  using Error::Error;
};

}  // namespace laser
