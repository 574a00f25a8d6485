#pragma once

#include <stdexcept>
#include <string>

namespace trimediq {

/// Base for every error raised by the engine.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed input document (KG JSON, dataset JSONL, checkpoint, config).
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t line = 0, std::string field = {})
      : Error(format(what, line, field)), line_(line), field_(std::move(field)) {}

  std::size_t line() const noexcept { return line_; }
  const std::string& field() const noexcept { return field_; }

 private:
  static std::string format(const std::string& what, std::size_t line, const std::string& field) {
    std::string out;
    if (line > 0) out += "line " + std::to_string(line) + ": ";
    if (!field.empty()) out += "field '" + field + "': ";
    return out + what;
  }

  std::size_t line_;
  std::string field_;
};

/// Inconsistent shapes, modes or backends detected before any work starts.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Dimension mismatch between tensors handed to a numerical routine.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// A backend call failed (network, HTTP status, unscripted mock request).
class TransportError : public Error {
 public:
  TransportError(const std::string& what, int attempts = 1, int status = 0)
      : Error(what + " (attempts: " + std::to_string(attempts) + ")"),
        attempts_(attempts),
        status_(status) {}

  int attempts() const noexcept { return attempts_; }
  int status() const noexcept { return status_; }

 private:
  int attempts_;
  int status_;
};

/// Scripted mock received a request it has no registered answer for.
class UnscriptedError : public TransportError {
 public:
  explicit UnscriptedError(const std::string& key)
      : TransportError("unscripted request, key " + key), key_(key) {}
  const std::string& key() const noexcept { return key_; }

 private:
  std::string key_;
};

/// Training diverged or failed to reach its target.
class TrainingError : public Error {
 public:
  using Error::Error;
};

}  // namespace trimediq
