#pragma once

#include <stdexcept>
#include <string>

namespace gstun {

// Base type for everything this library throws on purpose.
struct Error : std::runtime_error {
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

// Bad argument values (negative scales, lambda <= 0, out-of-range indices, ...).
struct ArgumentError : Error {
  using Error::Error;
};

// Text that does not tokenize the way the file format promises.
// line is 1-based within the offending file.
struct ParseError : Error {
  ParseError(const std::string& file, long line, const std::string& what)
      : Error(file + ":" + std::to_string(line) + ": " + what), line(line) {}
  long line;
};

// Well-formed tokens describing an impossible object (asymmetric edge list,
// cross-graph edge, label count mismatch, ...).
struct StructuralError : Error {
  using Error::Error;
};

// Operations that would leave an empty graph behind.
struct DegenerateGraphError : Error {
  using Error::Error;
};

// Internal consistency failures (bank/graph dimension mismatch and friends).
struct InternalError : Error {
  using Error::Error;
};

}  // namespace gstun
