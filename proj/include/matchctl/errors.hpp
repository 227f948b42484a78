#pragma once

#include <stdexcept>
#include <string>

namespace matchctl {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DimensionError : public Error {
 public:
  using Error::Error;
};

class InvalidArgument : public Error {
 public:
  using Error::Error;
};

// A matrix that had to be inverted was singular. `block()` names it
// ("g_gg", "A_ss", "C", "sigma", ...).
class SingularityError : public Error {
 public:
  SingularityError(std::string block, const std::string& what)
      : Error(what), block_(std::move(block)) {}
  const std::string& block() const { return block_; }

 private:
  std::string block_;
};

// A derived quantity that should not depend on velocities did.
class MatchingFailure : public Error {
 public:
  using Error::Error;
};

class QuadratureError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace matchctl
