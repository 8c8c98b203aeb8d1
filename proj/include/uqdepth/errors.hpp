#pragma once

#include <stdexcept>
#include <string>

namespace uqd {

// Exception types map one-to-one onto the CLI exit codes:
// ConfigError -> 2, IoError/CorruptionError -> 3, NumericalError -> 4.
// ShapeError, DomainError and ContractError indicate programming errors in
// graph construction and surface as 4 when they escape a command.

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class CorruptionError : public IoError {
 public:
  using IoError::IoError;
};

class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace uqd
