#pragma once

#include <stdexcept>
#include <string>

namespace nsfa {

// Sampler or model state is inconsistent (shape mismatch, non-finite values,
// residual drift beyond tolerance).
class InvalidState : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A mathematical function was called outside its domain.
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

// Inconsistent sampler/run configuration. The message names the violated rule.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& what, std::size_t line)
      : std::runtime_error(what + " (line " + std::to_string(line) + ")"),
        line_(line) {}

  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

}  // namespace nsfa
