#pragma once

#include <stdexcept>
#include <string>

namespace bmax {

// operand shapes do not chain / dimension mismatch
struct ShapeError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// numeric failure: singular factorization, non-finite loss, divergent state
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// bad configuration value; message names the offending key
struct ConfigError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// real environment produced a non-finite state
struct EnvFault : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace bmax
