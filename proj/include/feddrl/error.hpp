#pragma once

#include <stdexcept>
#include <string>

namespace feddrl {

// Invalid specs, configs, or file contents. The CLI maps this to exit code 2;
// all other exceptions map to exit code 3.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace feddrl
