// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace normalign {

/// Violated precondition of an operation (wrong shapes, bad labels, misuse of
/// the autodiff graph).
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Incompatible tensor dimensions. The message names both shapes.
class DimensionError : public ContractError {
 public:
  using ContractError::ContractError;
};

/// Argument outside the mathematical domain of a function (log of x <= 0).
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// Invalid user-supplied configuration. `field` is the JSON path of the
/// offending key, e.g. "weights.radius_R".
class ConfigError : public std::runtime_error {
 public:
  ConfigError(std::string field, const std::string& what)
      : std::runtime_error(field + ": " + what), field_(std::move(field)) {}
  const std::string& field() const noexcept { return field_; }

 private:
  std::string field_;
};

/// Base for on-disk format problems.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};
class VersionMismatchError : public FormatError {
 public:
  using FormatError::FormatError;
};
class TruncatedFileError : public FormatError {
 public:
  using FormatError::FormatError;
};
class ChecksumError : public FormatError {
 public:
  using FormatError::FormatError;
};
class ConsistencyError : public FormatError {
 public:
  using FormatError::FormatError;
};

/// A loss term became NaN or infinite during training.
class NumericalAbort : public std::runtime_error {
 public:
  NumericalAbort(std::string term, const std::string& what)
      : std::runtime_error(what), term_(std::move(term)) {}
  const std::string& term() const noexcept { return term_; }

 private:
  std::string term_;
};

/// A training path tried to read labels of the unlabeled target split.
class LabelHygieneViolation : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

}  // namespace normalign
