#pragma once

#include <stdexcept>
#include <string>

namespace sbl {

// Error categories map one-to-one onto CLI exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
  virtual int exit_code() const { return 1; }
};

class ConfigError : public Error {
 public:
  using Error::Error;
  int exit_code() const override { return 2; }
};

class DataError : public Error {
 public:
  using Error::Error;
  int exit_code() const override { return 3; }
};

class StaleStatsError : public Error {
 public:
  using Error::Error;
  int exit_code() const override { return 4; }
};

}  // namespace sbl
