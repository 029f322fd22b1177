#pragma once

#include <stdexcept>
#include <string>

namespace dlnet {

/// Invalid configuration value or dimension mismatch.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Model input of the wrong shape.
class InputError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Non-finite state, loss or gradient during training or integration.
class TrainingInstability : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// API called out of order (e.g. backward before any forward).
class UsageError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

class SchemaError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class EvaluationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class EmissionError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A pipeline stage could not produce a usable result.
class PipelineError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace dlnet
