#pragma once

#include <stdexcept>
#include <string>

namespace polecal {

/// Base class for all errors raised by the library.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

class OutOfRangeError : public Error {
 public:
  using Error::Error;
};

class DegeneratePoleError : public Error {
 public:
  using Error::Error;
};

class InsufficientPointsError : public Error {
 public:
  using Error::Error;
};

class DegenerateGeometryError : public Error {
 public:
  using Error::Error;
};

class EmptyMatchesError : public Error {
 public:
  using Error::Error;
};

class NonConvergenceError : public Error {
 public:
  using Error::Error;
};

class NoNeighborsError : public Error {
 public:
  using Error::Error;
};

class MissingYawError : public Error {
 public:
  using Error::Error;
};

class EmptyCandidatesError : public Error {
 public:
  using Error::Error;
};

class InfeasibleError : public Error {
 public:
  using Error::Error;
};

class InsufficientGroundError : public Error {
 public:
  using Error::Error;
};

class InvalidParamsError : public Error {
 public:
  using Error::Error;
};

class ParseError : public Error {
 public:
  using Error::Error;
};

class ValidationError : public Error {
 public:
  using Error::Error;
};

class SensorMismatchError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace polecal
