#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace multimage {

// Process exit codes. Each fault class maps to exactly one code so scripts can
// tell a bad flag from a missing file from an infeasible plan.
enum class ExitCode : int {
  kOk = 0,
  kInternal = 1,
  kUsage = 2,
  kConfig = 3,
  kIo = 4,
  kValidation = 5,
  kPlanning = 6,
  kRemote = 7,
};

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
  virtual ExitCode exit_code() const { return ExitCode::kInternal; }
};

// Missing credential, inconsistent flags, bad parameter values.
class ConfigError : public Error {
 public:
  using Error::Error;
  ExitCode exit_code() const override { return ExitCode::kConfig; }
};

class IoError : public Error {
 public:
  using Error::Error;
  ExitCode exit_code() const override { return ExitCode::kIo; }
};

// A record that could not be decoded. line is 1-based, 0 when not line-bound.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t line = 0)
      : Error(line ? "line " + std::to_string(line) + ": " + what : what), line_(line) {}
  std::size_t line() const { return line_; }
  ExitCode exit_code() const override { return ExitCode::kValidation; }

 private:
  std::size_t line_;
};

// Well-formed input that breaks an invariant. offenders names the ids involved.
class ValidationError : public Error {
 public:
  explicit ValidationError(const std::string& what, std::vector<std::string> offenders = {})
      : Error(what), offenders_(std::move(offenders)) {}
  const std::vector<std::string>& offenders() const { return offenders_; }
  ExitCode exit_code() const override { return ExitCode::kValidation; }

 private:
  std::vector<std::string> offenders_;
};

// Arguments outside an operation's mathematical domain.
class DomainError : public Error {
 public:
  using Error::Error;
  ExitCode exit_code() const override { return ExitCode::kValidation; }
};

class PlanningError : public Error {
 public:
  using Error::Error;
  ExitCode exit_code() const override { return ExitCode::kPlanning; }
};

// Remote service failure that survived the retry policy.
class RemoteError : public Error {
 public:
  RemoteError(const std::string& what, int status = 0) : Error(what), status_(status) {}
  int status() const { return status_; }
  ExitCode exit_code() const override { return ExitCode::kRemote; }

 private:
  int status_;
};

// 401/403 from a service: never retried, always fatal.
class AuthError : public RemoteError {
 public:
  using RemoteError::RemoteError;
  ExitCode exit_code() const override { return ExitCode::kConfig; }
};

}  // namespace multimage
