#pragma once

#include <stdexcept>
#include <string>

namespace signloop {

/// Index or range precondition violated (frame indices, slice bounds, ratings).
class RangeError : public std::out_of_range {
 public:
  using std::out_of_range::out_of_range;
};

/// Invalid configuration value or shape mismatch between a component and its input.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Operation not permitted in the current lifecycle state.
class StateError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

}  // namespace signloop
