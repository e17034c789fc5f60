#pragma once

#include <stdexcept>
#include <string>

namespace litens {

// Base class for everything this library throws on purpose.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Invalid arguments, unknown names, malformed configs. CLI exit code 2.
class UsageError : public Error {
 public:
  using Error::Error;
};

// Incompatible tensor/model/dataset dimensions. CLI exit code 4.
class ShapeError : public Error {
 public:
  explicit ShapeError(const std::string& msg, int node_id = -1)
      : Error(msg), node_id_(node_id) {}
  int node_id() const { return node_id_; }

 private:
  int node_id_;
};

// Non-finite values during optimization. CLI exit code 3.
class NumericError : public Error {
 public:
  NumericError(const std::string& msg, int epoch = -1, int batch = -1)
      : Error(msg), epoch_(epoch), batch_(batch) {}
  int epoch() const { return epoch_; }
  int batch() const { return batch_; }

 private:
  int epoch_;
  int batch_;
};

// File and parse failures.
class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace litens
