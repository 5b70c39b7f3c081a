#pragma once

#include <stdexcept>
#include <string>

namespace rnng {

// Bad flags, inconsistent dimensions, malformed run configuration. CLI exit 1.
struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& m) : std::runtime_error(m) {}
};

// Unreadable or malformed inputs: treebanks, vocab files, checkpoints. CLI exit 2.
struct DataError : std::runtime_error {
  explicit DataError(const std::string& m) : std::runtime_error(m) {}
};

// Non-finite losses/gradients, beam exhaustion, depth overflow. CLI exit 3.
struct NumericError : std::runtime_error {
  explicit NumericError(const std::string& m) : std::runtime_error(m) {}
};

}  // namespace rnng
