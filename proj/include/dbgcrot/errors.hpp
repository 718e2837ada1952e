#pragma once

#include <stdexcept>
#include <string>

namespace dbgcrot {

// Bad arguments: dimension mismatches, invalid configuration, bad flags.
class UsageError : public std::invalid_argument {
 public:
  explicit UsageError(const std::string& what) : std::invalid_argument(what) {}
};

// A numerical kernel failed to converge or produced non-finite values.
class NumericError : public std::runtime_error {
 public:
  explicit NumericError(const std::string& what) : std::runtime_error(what) {}
};

// Malformed input file.
class FormatError : public std::runtime_error {
 public:
  explicit FormatError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace dbgcrot
