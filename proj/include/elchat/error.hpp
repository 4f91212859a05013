#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace elchat {

/// Coarse failure class. Each maps onto one CLI exit code.
enum class ErrorKind : int {
  kValidation = 1,
  kIo = 2,
  kIntegrity = 3,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }
  int exit_code() const noexcept { return static_cast<int>(kind_); }

 private:
  ErrorKind kind_;
};

// Bad arguments, unmet preconditions, unknown names.
class ValidationError : public Error {
 public:
  explicit ValidationError(const std::string& what) : Error(ErrorKind::kValidation, what) {}
};

class NameError : public ValidationError {
 public:
  explicit NameError(const std::string& what) : ValidationError(what) {}
};

class ShapeError : public ValidationError {
 public:
  explicit ShapeError(const std::string& what) : ValidationError(what) {}
};

class NumericError : public ValidationError {
 public:
  explicit NumericError(const std::string& what) : ValidationError(what) {}
};

class IoError : public Error {
 public:
  explicit IoError(const std::string& what) : Error(ErrorKind::kIo, what) {}
};

// Data on disk or in memory contradicts itself.
class IntegrityError : public Error {
 public:
  explicit IntegrityError(const std::string& what) : Error(ErrorKind::kIntegrity, what) {}
};

/// Malformed archive header; carries the absolute byte offset of the problem.
class FormatError : public IntegrityError {
 public:
  FormatError(const std::string& what, std::uint64_t offset)
      : IntegrityError(what + " (at byte offset " + std::to_string(offset) + ")"), offset_(offset) {}

  std::uint64_t offset() const noexcept { return offset_; }

 private:
  std::uint64_t offset_;
};

}  // namespace elchat
