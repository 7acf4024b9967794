#pragma once

#include <stdexcept>
#include <string>

namespace usnrt {

// Bad arguments: wrong dimensions, out-of-range parameters, non-finite data.
class InvalidInput : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Levene's pooled variance is exactly zero; the split candidate is unusable.
class DegenerateVariance : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// CSV / schema / dataset problems.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Non-finite loss or other failure while fitting a network.
class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Model file could not be decoded (bad magic, version, truncation).
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace usnrt
