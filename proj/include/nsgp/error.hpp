#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace nsgp {

enum class ErrorCode {
  ParseError,
  MissingCell,
  EmptyInput,
  DuplicateRecord,
  DegenerateField,
  IndexOutOfRange,
  GeometryMismatch,
  DomainError,
  DuplicateLocations,
  NotPositiveDefinite,
  TooFewCells,
  NoConvergedWindows,
  ChainDiverged,
  NoSamples,
  StratumMismatch,
  UnknownSubcommand,
  MissingFlag,
  StageFailed,
  InvalidArgument,
  IoError,
};

std::string_view to_string(ErrorCode code);

// Numerical failures map to CLI exit code 2, everything else to 1.
bool is_numerical(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace nsgp
