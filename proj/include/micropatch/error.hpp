#pragma once

#include <stdexcept>
#include <string>

namespace micropatch {

// Base of every error the library throws. The CLI maps the category onto its
// exit-code contract (2 = configuration, 3 = data).
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DimensionError : public Error {
 public:
  using Error::Error;
};

class ConfigurationError : public Error {
 public:
  using Error::Error;
};

// Ingestion, sampling, split and label-range failures.
class DataError : public Error {
 public:
  using Error::Error;
};

class NumericError : public Error {
 public:
  using Error::Error;
};

class StatisticsError : public Error {
 public:
  using Error::Error;
};

class CheckpointError : public Error {
 public:
  using Error::Error;
};

}  // namespace micropatch
