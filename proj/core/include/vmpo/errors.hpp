#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace vmpo {

// Precondition violated by the caller.
class InvalidArgument : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// An enumeration oracle would exceed its tuple/trajectory budget.
class SizeLimitError : public std::length_error {
 public:
  using std::length_error::length_error;
};

// Non-finite or degenerate arithmetic (zero normaliser, NaN loss).
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeMismatch : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// The requested objective needs a model capability the current model lacks
// (e.g. state gradients on a finite state space).
class UnsupportedModel : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

namespace detail {

inline void require(bool ok, const std::string& what) {
  if (!ok) throw InvalidArgument(what);
}

inline void require_shape(std::size_t got, std::size_t want,
                          const char* what) {
  if (got != want) {
    throw ShapeMismatch(std::string(what) + ": expected size " +
                        std::to_string(want) + ", got " +
                        std::to_string(got));
  }
}

}  // namespace detail
}  // namespace vmpo
