#pragma once

#include <stdexcept>
#include <string>

namespace duralign {

/// Bad configuration or command input (CLI maps this to exit code 2).
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Filesystem / serialization failure (CLI maps this to exit code 3).
struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace duralign
