#pragma once

#include <map>
#include <stdexcept>
#include <string>

namespace stamps {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DimensionError : public Error {
 public:
  using Error::Error;
};

class InvalidBoxError : public Error {
 public:
  using Error::Error;
};

class EmptyMaskError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class UninitializedEmaError : public Error {
 public:
  using Error::Error;
};

class InsufficientSamplesError : public Error {
 public:
  using Error::Error;
};

class StageOrderError : public Error {
 public:
  using Error::Error;
};

/// Malformed or incompatible file (checkpoint, manifest, annotation, image).
class FormatError : public Error {
 public:
  using Error::Error;
};

/// A loss became non-finite. Carries the loss breakdown of the failing step.
class DivergenceError : public Error {
 public:
  DivergenceError(const std::string& what, std::map<std::string, double> breakdown)
      : Error(what), breakdown_(std::move(breakdown)) {}

  const std::map<std::string, double>& breakdown() const noexcept { return breakdown_; }

 private:
  std::map<std::string, double> breakdown_;
};

}  // namespace stamps
