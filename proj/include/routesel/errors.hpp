#pragma once

#include <stdexcept>
#include <string>

namespace routesel {

// Exception hierarchy. Every error carries a human-readable message that names
// the offending operation or value; callers catch the specific type when they
// can recover (e.g. a failed external solver) and let the rest propagate.

struct DimensionError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct ContractViolation : std::logic_error {
  using std::logic_error::logic_error;
};

struct DomainError : std::domain_error {
  using std::domain_error::domain_error;
};

struct ConfigError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct ParameterError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct LabelError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct TrainingError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ValidationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct UnsupportedFormatError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& what, std::size_t line)
      : std::runtime_error("line " + std::to_string(line) + ": " + what), line_(line) {}

  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

// A solver could not produce a usable solution. Performance tables record these
// as +inf objectives instead of aborting.
class SolverFailure : public std::runtime_error {
 public:
  enum class Kind { kLaunch, kTimeout, kExit, kMalformed, kSolverError, kInvalidSolution };

  SolverFailure(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}

  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

// A pipeline stage failed; names the stage and the artifacts already written
// so that the run can be resumed.
class StageError : public std::runtime_error {
 public:
  StageError(const std::string& stage, const std::string& artifacts, const std::string& what)
      : std::runtime_error("stage '" + stage + "' failed: " + what + " (artifacts so far: " + artifacts + ")"),
        stage_(stage) {}

  const std::string& stage() const { return stage_; }

 private:
  std::string stage_;
};

}  // namespace routesel
