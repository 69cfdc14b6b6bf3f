#pragma once

#include <stdexcept>
#include <string>

namespace rap {

// Root of every exception thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class NonFiniteError : public Error {
 public:
  using Error::Error;
};

// Misuse of the autodiff tape (non-scalar root, detached tensor, ...).
class GraphError : public Error {
 public:
  using Error::Error;
};

class LabelError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

// Weight file / checkpoint decoding problems.
class FormatError : public Error {
 public:
  enum class Kind { magic_mismatch, checksum_mismatch, shape_mismatch, truncated, io };

  FormatError(Kind kind, const std::string& what) : Error(what), kind_(kind) {}
  Kind kind() const noexcept { return kind_; }

 private:
  Kind kind_;
};

class DataError : public Error {
 public:
  enum class Kind { bad_magic, truncated, count_mismatch, missing_labels, unknown_generator, bad_fractions, io };

  DataError(Kind kind, const std::string& what) : Error(what), kind_(kind) {}
  Kind kind() const noexcept { return kind_; }

 private:
  Kind kind_;
};

// An adversarial example escaped its perturbation budget.
class BudgetError : public Error {
 public:
  using Error::Error;
};

}  // namespace rap
