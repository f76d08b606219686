#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace dcl {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Enumeration exceeded the configured entry cap.
class ResourceError : public Error {
 public:
  using Error::Error;
};

/// A score 1/pi was requested where pi is zero.
class DegenerateScoreError : public Error {
 public:
  using Error::Error;
};

/// Non-finite parameter during training.
class DivergenceError : public Error {
 public:
  DivergenceError(const std::string& what, std::size_t episode)
      : Error(what), episode_(episode) {}
  std::size_t episode() const { return episode_; }

 private:
  std::size_t episode_;
};

/// An operation was called on an input that violates its documented precondition.
class PreconditionError : public Error {
 public:
  using Error::Error;
};

}  // namespace dcl
