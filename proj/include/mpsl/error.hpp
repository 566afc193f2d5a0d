#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace mpsl {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Malformed scenario/job text. `line` is 1-based, 0 when unknown.
struct ParseError : Error {
  ParseError(const std::string& what, std::size_t line)
      : Error(line ? "line " + std::to_string(line) + ": " + what : what), line(line) {}
  std::size_t line;
};

/// A well-formed input that violates a model constraint (cut order, memory, ...).
struct ValidationError : Error {
  using Error::Error;
};

/// No split satisfies the per-node memory constraint.
struct InfeasibleError : Error {
  using Error::Error;
};

}  // namespace mpsl
