#pragma once

#include <stdexcept>
#include <string>

namespace bpgat {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed DIMACS, JSONL records, checkpoints, or CLI arguments.
class ParseError : public Error {
 public:
  using Error::Error;
};

class InvalidArgument : public Error {
 public:
  using Error::Error;
};

class InstanceTooLarge : public Error {
 public:
  using Error::Error;
};

// Exact counting exceeded its wall-clock budget.
class Timeout : public Error {
 public:
  using Error::Error;
};

class BudgetExhausted : public Error {
 public:
  using Error::Error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class ConfigMismatch : public Error {
 public:
  using Error::Error;
};

// Training loss became NaN or infinite.
class Divergence : public Error {
 public:
  using Error::Error;
};

}  // namespace bpgat
