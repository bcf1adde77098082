#pragma once

#include <stdexcept>
#include <string>

namespace zanim {

// Bad input: shapes, ranges, malformed files. The CLI maps this to exit code 1.
struct ValidationError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// A quantity that should be finite is not. The CLI maps this to exit code 2.
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline void require(bool ok, const std::string& what) {
  if (!ok) throw ValidationError(what);
}

}  // namespace zanim
