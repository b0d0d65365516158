#pragma once

#include <stdexcept>
#include <string>

namespace dirmlab {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Graph / SCM validation
struct CyclicGraph : Error {
  using Error::Error;
};
struct UnknownName : Error {
  using Error::Error;
};

// Numerics
struct SingularCovariance : Error {
  using Error::Error;
};
struct DimensionMismatch : Error {
  using Error::Error;
};
struct LabelDomain : Error {
  using Error::Error;
};
struct Unsupported : Error {
  using Error::Error;
};

// Training
struct EmptySplit : Error {
  using Error::Error;
};

// Generic precondition violation (n < 1, step <= 0, fraction out of range, ...)
struct Precondition : Error {
  using Error::Error;
};

// Configuration
struct ParseError : Error {
  ParseError(const std::string& msg, int line_, int col_)
      : Error(msg + " (line " + std::to_string(line_) + ", col " + std::to_string(col_) + ")"),
        line(line_),
        col(col_) {}
  int line = 0;
  int col = 0;
};

struct ValidationError : Error {
  ValidationError(const std::string& key_, const std::string& msg)
      : Error(key_ + ": " + msg), key(key_) {}
  std::string key;
};

}  // namespace dirmlab
