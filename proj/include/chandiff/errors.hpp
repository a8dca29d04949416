#pragma once

#include <stdexcept>
#include <string>

namespace chandiff {

/// Base class for every error raised by the library. `exit_code()` is the
/// process exit status the CLI reports for this category.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
  virtual int exit_code() const noexcept { return 2; }
};

class ArgumentError : public Error {
 public:
  using Error::Error;
};

class IndexError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
  int exit_code() const noexcept override { return 1; }
};

class NumericError : public Error {
 public:
  using Error::Error;
};

class StatisticsError : public Error {
 public:
  using Error::Error;
};

/// Raised when a mobility profile yields a correlation outside (-1, 1].
class ScheduleError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
  int exit_code() const noexcept override { return 3; }
};

namespace detail {

template <class E = ArgumentError>
inline void require(bool cond, const std::string& what) {
  if (!cond) throw E(what);
}

}  // namespace detail
}  // namespace chandiff
