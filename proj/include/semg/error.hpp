#pragma once

#include <stdexcept>
#include <string>

namespace semg {

/// Invalid or inconsistent configuration (CLI exit code 2).
class ConfigError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

/// A required artifact such as a checkpoint is absent (CLI exit code 3).
class MissingArtifactError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

/// Non-finite loss, gradient, objective or sample (CLI exit code 4).
class NumericError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

class TrainingError : public NumericError {
  public:
    using NumericError::NumericError;
};

class GenerationError : public NumericError {
  public:
    using NumericError::NumericError;
};

/// Checkpoint could not be parsed or does not match the expected network.
class LoadError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

/// Caller broke a documented precondition (dimension mismatch, stale cache...).
class ContractViolation : public std::logic_error {
  public:
    using std::logic_error::logic_error;
};

/// A metric or estimate is undefined for the given input (e.g. zero cells).
class UndefinedResultError : public std::domain_error {
  public:
    using std::domain_error::domain_error;
};

class IoError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

inline void require(bool cond, const std::string& what) {
    if (!cond) throw ContractViolation(what);
}

}  // namespace semg
