#pragma once

#include <stdexcept>
#include <string>

namespace mv3d {

// Shape mismatch between operands.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Input that makes an operation undefined (zero vector, empty table).
class DegenerateInputError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

// A documented precondition was violated by the caller.
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Region mask selects no patch cell after downsampling.
class EmptyRegionError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class EmptyBankError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class EmptyBatchError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed or truncated binary file.
class FormatError : public std::runtime_error {
 public:
  FormatError(const std::string& what, std::size_t offset)
      : std::runtime_error(what + " (at byte offset " + std::to_string(offset) + ")"), offset_(offset) {}
  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

// Text span the canonicalizer has no rule for.
class UnmappableError : public std::runtime_error {
 public:
  UnmappableError(const std::string& span)
      : std::runtime_error("unmappable phrase: \"" + span + "\""), span_(span) {}
  const std::string& span() const noexcept { return span_; }

 private:
  std::string span_;
};

}  // namespace mv3d
