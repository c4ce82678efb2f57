#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace curation_forge {

enum class ErrorCode {
  parse,
  duplicate_id,
  mixed_dimension,
  corrupt_file,
  truncated,
  io,
  invalid_argument,
  precondition,
  degenerate,
  infinite_loss,
};

inline const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::parse: return "parse";
    case ErrorCode::duplicate_id: return "duplicate_id";
    case ErrorCode::mixed_dimension: return "mixed_dimension";
    case ErrorCode::corrupt_file: return "corrupt_file";
    case ErrorCode::truncated: return "truncated";
    case ErrorCode::io: return "io";
    case ErrorCode::invalid_argument: return "invalid_argument";
    case ErrorCode::precondition: return "precondition";
    case ErrorCode::degenerate: return "degenerate";
    case ErrorCode::infinite_loss: return "infinite_loss";
  }
  return "unknown";
}

// Every failure raised by the library carries a machine-readable code.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

class ParseError : public Error {
 public:
  ParseError(std::size_t line, const std::string& what)
      : Error(ErrorCode::parse, "line " + std::to_string(line) + ": " + what),
        line_(line) {}

  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) {
  throw Error(code, what);
}

inline void require(bool cond, ErrorCode code, const std::string& what) {
  if (!cond) fail(code, what);
}

}  // namespace curation_forge
