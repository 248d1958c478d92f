#pragma once

#include <stdexcept>
#include <string>

namespace cissl {

// Invalid configuration or out-of-range hyperparameter. The CLI maps this to exit code 2.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Non-finite loss, gradient, or input. The CLI maps this to exit code 3.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace cissl
