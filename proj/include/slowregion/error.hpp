#pragma once

#include <stdexcept>
#include <string>

namespace slowregion {

// Base class for everything thrown by the library. The CLI maps each
// subtree to a distinct exit code.
class Error : public std::runtime_error {
public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Bad or inconsistent configuration (unknown key, invalid value, ...).
class ConfigError : public Error {
public:
  explicit ConfigError(const std::string& msg) : Error(msg) {}
};

// Filesystem / stream failures.
class IoError : public Error {
public:
  explicit IoError(const std::string& msg) : Error(msg) {}
};

// A file exists but its content cannot be decoded.
class DecodeError : public IoError {
public:
  explicit DecodeError(const std::string& msg) : IoError(msg) {}
};

// A video directory contained no usable frames.
class EmptyVideoError : public IoError {
public:
  explicit EmptyVideoError(const std::string& msg) : IoError(msg) {}
};

// Tensor / layer shape mismatch.
class ShapeError : public Error {
public:
  explicit ShapeError(const std::string& msg) : Error(msg) {}
};

// A batch cannot supply the required number of cross-video negatives.
class NegativeSourceExhausted : public Error {
public:
  explicit NegativeSourceExhausted(const std::string& msg) : Error(msg) {}
};

}  // namespace slowregion
