#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace cbc {

class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Dimension mismatches, out-of-range arguments, shape incongruence.
class InvalidInput : public Error {
public:
  using Error::Error;
};

/// A file line that is not well-formed JSON or lacks required fields.
class ParseError : public Error {
public:
  ParseError(std::size_t line, const std::string &what)
      : Error("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const { return line_; }

private:
  std::size_t line_;
};

/// Well-formed input that contradicts the declared header (missing header, wrong dims).
class SchemaError : public Error {
public:
  SchemaError(std::size_t line, const std::string &what)
      : Error("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const { return line_; }

private:
  std::size_t line_;
};

class TrainingDiverged : public Error {
public:
  TrainingDiverged(int epoch, int batch, const std::string &what)
      : Error("training diverged at epoch " + std::to_string(epoch) + ", batch " +
              std::to_string(batch) + ": " + what),
        epoch_(epoch), batch_(batch) {}
  int epoch() const { return epoch_; }
  int batch() const { return batch_; }

private:
  int epoch_;
  int batch_;
};

} // namespace cbc
