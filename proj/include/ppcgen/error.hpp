#pragma once

#include <stdexcept>
#include <string>

namespace ppc {

// Error taxonomy shared by the core library and the C API layer, which maps
// each type onto a ppc_status code.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Tensor shapes do not line up (matmul inner dims, concat widths, ...).
class ShapeError : public Error {
 public:
  using Error::Error;
};

// An index (token id, class label, position) is out of range.
class IndexError : public Error {
 public:
  using Error::Error;
};

// Non-finite values where finite math was required.
class NumericError : public Error {
 public:
  using Error::Error;
};

// Invalid configuration values or inconsistent sub-configs.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Sequence does not fit the model's context budget.
class CapacityError : public Error {
 public:
  using Error::Error;
};

// Corpus / dataset problems (single-class labels, unknown tokens, ...).
class DataError : public Error {
 public:
  using Error::Error;
};

// Operation applied to the wrong variant or an empty domain.
class DomainError : public Error {
 public:
  using Error::Error;
};

// File system and serialization failures.
class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace ppc
