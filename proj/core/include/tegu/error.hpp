#pragma once

#include <stdexcept>
#include <string>

namespace tegu {

// Base for all library errors. Subtypes map onto the CLI exit-code policy:
// ConfigError -> 3, everything else -> 1.
class Error : public std::runtime_error {
public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

class ShapeError : public Error {
public:
  explicit ShapeError(const std::string& msg) : Error(msg) {}
};

class ValueError : public Error {
public:
  explicit ValueError(const std::string& msg) : Error(msg) {}
};

class IoError : public Error {
public:
  explicit IoError(const std::string& msg) : Error(msg) {}
};

class ConfigError : public Error {
public:
  explicit ConfigError(const std::string& msg) : Error(msg) {}
};

}  // namespace tegu
