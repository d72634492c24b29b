#pragma once

#include <stdexcept>
#include <string>

namespace saeboost {

enum class ErrorKind {
  kShape,
  kConfig,
  kData,
  kNumeric,
  kFormat,
  kVersion,
  kIo,
  kAcceptance,
};

const char* to_string(ErrorKind kind);

/// Base class for every error raised by the library. The kind drives the
/// CLI exit-code class.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message);

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

class ShapeError : public Error {
 public:
  explicit ShapeError(const std::string& m) : Error(ErrorKind::kShape, m) {}
};

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& m) : Error(ErrorKind::kConfig, m) {}
};

class DataError : public Error {
 public:
  explicit DataError(const std::string& m) : Error(ErrorKind::kData, m) {}
};

class NumericError : public Error {
 public:
  explicit NumericError(const std::string& m) : Error(ErrorKind::kNumeric, m) {}
};

class FormatError : public Error {
 public:
  explicit FormatError(const std::string& m) : Error(ErrorKind::kFormat, m) {}
};

class VersionError : public Error {
 public:
  explicit VersionError(const std::string& m) : Error(ErrorKind::kVersion, m) {}
};

class IoError : public Error {
 public:
  explicit IoError(const std::string& m) : Error(ErrorKind::kIo, m) {}
};

// Exit-code classes used by the command-line tool.
constexpr int kExitOk = 0;
constexpr int kExitUsage = 2;
constexpr int kExitData = 3;
constexpr int kExitNumeric = 4;
constexpr int kExitAcceptance = 5;

int exit_code_for(ErrorKind kind);

}  // namespace saeboost
