#pragma once

#include <stdexcept>
#include <string>

namespace ndlc {

// Exit-code classes used by the CLI: SpecError -> 1, DataError -> 2,
// NumericError -> 3.
class SpecError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Divergent chain (nonfinite log-density during sampling).
class SamplerError : public NumericError {
 public:
  using NumericError::NumericError;
};

}  // namespace ndlc
