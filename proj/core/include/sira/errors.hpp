#pragma once

#include <stdexcept>
#include <string>

namespace sira {

/// Base class for every error thrown by the library.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

/// Dimension or length mismatch between tensors, masks, or caches.
class ShapeError : public Error {
 public:
  explicit ShapeError(const std::string& msg) : Error(msg) {}
};

/// Invalid model, boundary, contrast, or scene configuration.
class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& msg) : Error(msg) {}
};

/// A softmax query row whose keys are all masked out.
class DegenerateRowError : public Error {
 public:
  explicit DegenerateRowError(const std::string& msg) : Error(msg) {}
};

/// Position discontinuity when extending a mask or cache.
class SequenceError : public Error {
 public:
  explicit SequenceError(const std::string& msg) : Error(msg) {}
};

/// Bad magic, version, or structure in a file being loaded.
class FormatError : public Error {
 public:
  explicit FormatError(const std::string& msg) : Error(msg) {}
};

/// Malformed JSONL input; carries the 1-based line number.
class ParseError : public Error {
 public:
  ParseError(const std::string& msg, long line)
      : Error(msg + " (line " + std::to_string(line) + ")"), line_(line) {}
  long line() const { return line_; }

 private:
  long line_;
};

/// Loss divergence during training.
class TrainingError : public Error {
 public:
  explicit TrainingError(const std::string& msg) : Error(msg) {}
};

/// Filesystem failure.
class IoError : public Error {
 public:
  explicit IoError(const std::string& msg) : Error(msg) {}
};

}  // namespace sira
