#pragma once

#include <stdexcept>
#include <string>

namespace segcal {

// An argument violates an operation's documented domain.
class invalid_input : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// An object's internal state fails a required invariant.
class invalid_state : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// A calibration metric was asked to evaluate an empty pixel selection.
class empty_evaluation : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// The synthetic generator could not place the requested shapes.
class generation_error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Training produced a non-finite loss.
class divergence_error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace segcal
