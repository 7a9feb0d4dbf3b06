#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace agtcnet {

// Base of every error the library raises. The CLI maps subclasses onto exit
// codes (see tools/agtcnet_cli.cpp).
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Tensor or stage shape mismatch.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Bad argument values (cutoff above Nyquist, odd PE dim, rate >= 1, ...).
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

// Malformed external data. `offset` is the byte position where parsing
// stopped, or -1 when not meaningful.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::int64_t offset = -1)
      : Error(offset >= 0 ? what + " (at byte " + std::to_string(offset) + ")" : what),
        offset_(offset) {}
  std::int64_t offset() const { return offset_; }

 private:
  std::int64_t offset_;
};

// Inconsistent dataset content (missing files, bad labels, leakage).
class DataError : public Error {
 public:
  using Error::Error;
};

// Training produced a non-finite loss or similar numeric breakdown.
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace agtcnet
