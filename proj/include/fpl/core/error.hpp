#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace fpl {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Array or volume dimensions disagree.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// A precondition on argument values does not hold.
class ValidationError : public Error {
 public:
  using Error::Error;
};

class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t byte_offset)
      : Error(what + " (at byte " + std::to_string(byte_offset) + ")"), offset_(byte_offset) {}
  std::size_t byte_offset() const { return offset_; }

 private:
  std::size_t offset_;
};

class TruncationError : public Error {
 public:
  using Error::Error;
};

class UnsupportedEncodingError : public Error {
 public:
  using Error::Error;
};

/// Two checkpoints or networks cannot be combined.
class IncompatibilityError : public Error {
 public:
  using Error::Error;
};

/// Non-finite loss or value during optimisation.
class NumericError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

/// An upstream pipeline stage has not produced its artifacts.
class MissingStageError : public Error {
 public:
  MissingStageError(const std::string& stage, const std::string& detail)
      : Error("missing output of stage '" + stage + "': " + detail), stage_(stage) {}
  const std::string& stage() const { return stage_; }

 private:
  std::string stage_;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace fpl
