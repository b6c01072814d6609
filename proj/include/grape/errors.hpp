#pragma once

#include <stdexcept>
#include <string>
#include <utility>

namespace grape {

// Shared error taxonomy. `code` is a stable machine-readable identifier; the
// CLI maps each class to a fixed exit status and prints {code, message} as a
// JSON line on stderr.
class Error : public std::runtime_error {
  public:
    Error(std::string code, const std::string & message)
        : std::runtime_error(message), code_(std::move(code)) {}

    const std::string & code() const noexcept { return code_; }

  private:
    std::string code_;
};

// Invalid request: bad sizes, infeasible budgets, unusable flag combinations. Exit 1.
class ConfigError : public Error {
  public:
    using Error::Error;
};

// Malformed or inconsistent data: shape mismatches, non-finite or degenerate
// inputs, unreadable files. Exit 2.
class DataError : public Error {
  public:
    using Error::Error;
};

// The greedy planner can no longer make progress toward the budget. Exit 3.
class StallError : public Error {
  public:
    using Error::Error;
};

}  // namespace grape
