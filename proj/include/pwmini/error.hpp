#pragma once

#include <stdexcept>
#include <string>

namespace pwmini {

// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A precondition on an argument was violated (bad rank, bad shape, ...).
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

// The rank world was shut down while an operation was pending.
class WorldShutdown : public Error {
 public:
  WorldShutdown() : Error("world shut down") {}
  explicit WorldShutdown(const std::string& what) : Error(what) {}
};

}  // namespace pwmini
