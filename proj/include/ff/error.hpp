#pragma once

#include <stdexcept>
#include <string>

namespace ff {

// Dimension/shape disagreements between tensors or images.
class DimensionError : public std::runtime_error {
 public:
  explicit DimensionError(const std::string& msg) : std::runtime_error(msg) {}
};

// Violated API contract (bad argument range, non-scalar loss, ...).
class ContractError : public std::runtime_error {
 public:
  explicit ContractError(const std::string& msg) : std::runtime_error(msg) {}
};

// Filesystem-level failures: missing file, short read, unwritable path.
class IoError : public std::runtime_error {
 public:
  explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

// Malformed or unsupported file content.
class FormatError : public std::runtime_error {
 public:
  explicit FormatError(const std::string& msg) : std::runtime_error(msg) {}
};

// Configuration schema violations; carries one message per bad field.
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// Checkpoint problems, one class per failure mode so callers can tell
// them apart.
class CheckpointError : public std::runtime_error {
 public:
  explicit CheckpointError(const std::string& msg) : std::runtime_error(msg) {}
};

class BadMagicError : public CheckpointError {
 public:
  explicit BadMagicError(const std::string& msg) : CheckpointError(msg) {}
};

class BadVersionError : public CheckpointError {
 public:
  explicit BadVersionError(const std::string& msg) : CheckpointError(msg) {}
};

class ShapeMismatchError : public CheckpointError {
 public:
  explicit ShapeMismatchError(const std::string& msg) : CheckpointError(msg) {}
};

class TruncatedFileError : public CheckpointError {
 public:
  explicit TruncatedFileError(const std::string& msg) : CheckpointError(msg) {}
};

}  // namespace ff
