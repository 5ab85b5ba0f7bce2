#pragma once

#include <stdexcept>
#include <string>

namespace gcfpca {

// Input or argument problems: bad CSV, inconsistent shapes, invalid flags.
class ValidationError : public std::invalid_argument {
 public:
  explicit ValidationError(const std::string& msg) : std::invalid_argument(msg) {}
};

// A fit diverged or an iterative solver could not reach its tolerance.
class ConvergenceError : public std::runtime_error {
 public:
  explicit ConvergenceError(const std::string& msg) : std::runtime_error(msg) {}
};

// File system / serialization failures.
class IoError : public std::runtime_error {
 public:
  explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace gcfpca
