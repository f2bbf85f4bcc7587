#pragma once

#include <stdexcept>
#include <string>

namespace clf {

// Misconfiguration detected before any work starts (bad shapes, bad constants).
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

// Data that fails validation (bad labels, malformed records, id mismatches).
class InputError : public std::runtime_error {
 public:
  explicit InputError(const std::string& what) : std::runtime_error(what) {}
};

// API called out of order (backward twice, optimizer step before backward).
class UsageError : public std::runtime_error {
 public:
  explicit UsageError(const std::string& what) : std::runtime_error(what) {}
};

class IoError : public std::runtime_error {
 public:
  explicit IoError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace clf
