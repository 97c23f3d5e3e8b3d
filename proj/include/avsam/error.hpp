#pragma once

#include <stdexcept>
#include <string>

namespace avsam {

/// Raised when a caller violates an operation's preconditions (bad shapes,
/// bad files, bad flags). The CLI maps it to exit code 1.
class ContractError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Raised when an internal invariant breaks (NaN loss, inconsistent state).
/// The CLI maps it to exit code 2.
class InvariantError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw ContractError(msg);
}

inline void ensure(bool cond, const std::string& msg) {
  if (!cond) throw InvariantError(msg);
}

}  // namespace avsam
