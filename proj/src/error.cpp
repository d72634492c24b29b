#include "saeboost/error.hpp"

namespace saeboost {

const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kShape: return "shape error";
    case ErrorKind::kConfig: return "config error";
    case ErrorKind::kData: return "data error";
    case ErrorKind::kNumeric: return "numeric error";
    case ErrorKind::kFormat: return "format error";
    case ErrorKind::kVersion: return "version error";
    case ErrorKind::kIo: return "io error";
    case ErrorKind::kAcceptance: return "acceptance failure";
  }
  return "error";
}

Error::Error(ErrorKind kind, const std::string& message)
    : std::runtime_error(std::string(to_string(kind)) + ": " + message), kind_(kind) {}

int exit_code_for(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kConfig:
      return kExitUsage;
    case ErrorKind::kNumeric:
      return kExitNumeric;
    case ErrorKind::kAcceptance:
      return kExitAcceptance;
    case ErrorKind::kShape:
    case ErrorKind::kData:
    case ErrorKind::kFormat:
    case ErrorKind::kVersion:
    case ErrorKind::kIo:
      return kExitData;
  }
  return kExitData;
}

}  // namespace saeboost
