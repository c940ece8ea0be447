#pragma once

#include <stdexcept>
#include <string>

namespace dccl {

// Base class for every error thrown by the library.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Tensor/layer shape incompatibilities (wrong channel count, mismatched dims, ...).
class ShapeError : public Error {
 public:
  explicit ShapeError(const std::string& msg) : Error("shape error: " + msg) {}
};

// Invalid architecture descriptions (broken layer chain, missing classifier, ...).
class SpecError : public Error {
 public:
  explicit SpecError(const std::string& msg) : Error("spec error: " + msg) {}
};

// Violations of a training-phase contract (backward without forward, unfrozen
// control model during collaborative training, phases run out of order, ...).
class ContractError : public Error {
 public:
  explicit ContractError(const std::string& msg) : Error("contract violation: " + msg) {}
};

// On-disk format errors. The kind is part of the contract: callers can tell a
// truncated file from a bad header from an out-of-range label.
class DataFormatError : public Error {
 public:
  enum class Kind { BadMagic, BadVersion, Truncated, LabelOutOfRange, BadHeader, DigestMismatch };

  DataFormatError(Kind kind, const std::string& msg)
      : Error("data format error (" + kind_name(kind) + "): " + msg), kind_(kind) {}

  Kind kind() const { return kind_; }

  static std::string kind_name(Kind k) {
    switch (k) {
      case Kind::BadMagic: return "bad magic";
      case Kind::BadVersion: return "bad version";
      case Kind::Truncated: return "truncated";
      case Kind::LabelOutOfRange: return "label out of range";
      case Kind::BadHeader: return "bad header";
      case Kind::DigestMismatch: return "digest mismatch";
    }
    return "unknown";
  }

 private:
  Kind kind_;
};

// Experiment-config errors, again with a testable kind.
class ConfigError : public Error {
 public:
  enum class Kind { MissingField, UnknownKey, UnknownMethod, ConstraintViolation, BadValue, Io };

  ConfigError(Kind kind, const std::string& msg)
      : Error("config error (" + kind_name(kind) + "): " + msg), kind_(kind) {}

  Kind kind() const { return kind_; }

  static std::string kind_name(Kind k) {
    switch (k) {
      case Kind::MissingField: return "missing field";
      case Kind::UnknownKey: return "unknown key";
      case Kind::UnknownMethod: return "unknown method";
      case Kind::ConstraintViolation: return "constraint violation";
      case Kind::BadValue: return "bad value";
      case Kind::Io: return "io";
    }
    return "unknown";
  }

 private:
  Kind kind_;
};

class IoError : public Error {
 public:
  explicit IoError(const std::string& msg) : Error("io error: " + msg) {}
};

}  // namespace dccl
