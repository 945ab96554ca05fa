#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <string_view>

namespace tapstroop {

enum class Errc {
  ContractViolation,
  InvalidTransition,
  InsufficientHistory,
  InvalidConfig,
  IgnoredContact,
  EarlyResponse,
  DuplicateResponse,
  InsufficientData,
  ParseError,
  CorruptLog,
  CalibrationFailed,
  Io,
};

constexpr std::string_view errc_name(Errc code) {
  switch (code) {
    case Errc::ContractViolation: return "ContractViolation";
    case Errc::InvalidTransition: return "InvalidTransition";
    case Errc::InsufficientHistory: return "InsufficientHistory";
    case Errc::InvalidConfig: return "InvalidConfig";
    case Errc::IgnoredContact: return "IgnoredContact";
    case Errc::EarlyResponse: return "EarlyResponse";
    case Errc::DuplicateResponse: return "DuplicateResponse";
    case Errc::InsufficientData: return "InsufficientData";
    case Errc::ParseError: return "ParseError";
    case Errc::CorruptLog: return "CorruptLog";
    case Errc::CalibrationFailed: return "CalibrationFailed";
    case Errc::Io: return "Io";
  }
  return "Unknown";
}

/// Every recoverable failure in the library is an Error carrying a code, so
/// callers (the service, the CLI) can map it without parsing messages.
class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what)
      : std::runtime_error(std::string(errc_name(code)) + ": " + what), code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

/// ParseError / CorruptLog raised while reading a log; `line` is 1-based.
class LogError : public Error {
 public:
  LogError(Errc code, std::size_t line, const std::string& what)
      : Error(code, "line " + std::to_string(line) + ": " + what), line_(line) {}

  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

inline void require(bool ok, const char* what, Errc code = Errc::ContractViolation) {
  if (!ok) throw Error(code, what);
}

}  // namespace tapstroop
