#pragma once

#include <stdexcept>
#include <string>

namespace invertfill {

// Base of every error the library raises. kind() is the stable, machine-parseable
// class name printed by the CLI.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
  virtual const char* kind() const noexcept = 0;
};

class InvalidInput : public Error {
 public:
  using Error::Error;
  const char* kind() const noexcept override { return "invalid_input"; }
};

class IoError : public Error {
 public:
  using Error::Error;
  const char* kind() const noexcept override { return "io_error"; }
};

class CheckpointMismatch : public Error {
 public:
  using Error::Error;
  const char* kind() const noexcept override { return "checkpoint_mismatch"; }
};

class ConfigError : public Error {
 public:
  using Error::Error;
  const char* kind() const noexcept override { return "config_error"; }
};

// Raised when training produces a non-finite value. term() names the offending loss term.
class TrainingFault : public Error {
 public:
  TrainingFault(std::string term, const std::string& what)
      : Error(what), term_(std::move(term)) {}
  const char* kind() const noexcept override { return "training_fault"; }
  const std::string& term() const noexcept { return term_; }

 private:
  std::string term_;
};

// Internal invariant violated (e.g. the hard constraint after composition).
class InvariantViolation : public Error {
 public:
  using Error::Error;
  const char* kind() const noexcept override { return "invariant_violation"; }
};

}  // namespace invertfill
