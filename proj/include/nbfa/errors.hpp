#pragma once

#include <stdexcept>
#include <string>

namespace nbfa {

/// Invalid distribution or model parameter (non-finite, out of support).
class ParameterError : public std::invalid_argument {
public:
  using std::invalid_argument::invalid_argument;
};

/// Argument outside the domain of a mathematical function or table.
class DomainError : public std::domain_error {
public:
  using std::domain_error::domain_error;
};

/// Malformed input file. Carries the 1-based line number when known.
class ParseError : public std::runtime_error {
public:
  ParseError(const std::string &what, long line)
      : std::runtime_error(line > 0 ? what + " (line " + std::to_string(line) + ")" : what),
        line_(line) {}
  long line() const { return line_; }

private:
  long line_;
};

/// Unsupported model/sampler combination or inconsistent chain settings.
class ConfigError : public std::invalid_argument {
public:
  using std::invalid_argument::invalid_argument;
};

/// The model cannot provide the requested output (e.g. per-sample features
/// from a model whose scores are shared across samples).
class CapabilityError : public std::invalid_argument {
public:
  using std::invalid_argument::invalid_argument;
};

/// Numerical failure that the positivity invariants should have ruled out.
class NumericError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

} // namespace nbfa
