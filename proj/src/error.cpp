#include "nsgp/error.hpp"

namespace nsgp {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::ParseError: return "ParseError";
    case ErrorCode::MissingCell: return "MissingCell";
    case ErrorCode::EmptyInput: return "EmptyInput";
    case ErrorCode::DuplicateRecord: return "DuplicateRecord";
    case ErrorCode::DegenerateField: return "DegenerateField";
    case ErrorCode::IndexOutOfRange: return "IndexOutOfRange";
    case ErrorCode::GeometryMismatch: return "GeometryMismatch";
    case ErrorCode::DomainError: return "DomainError";
    case ErrorCode::DuplicateLocations: return "DuplicateLocations";
    case ErrorCode::NotPositiveDefinite: return "NotPositiveDefinite";
    case ErrorCode::TooFewCells: return "TooFewCells";
    case ErrorCode::NoConvergedWindows: return "NoConvergedWindows";
    case ErrorCode::ChainDiverged: return "ChainDiverged";
    case ErrorCode::NoSamples: return "NoSamples";
    case ErrorCode::StratumMismatch: return "StratumMismatch";
    case ErrorCode::UnknownSubcommand: return "UnknownSubcommand";
    case ErrorCode::MissingFlag: return "MissingFlag";
    case ErrorCode::StageFailed: return "StageFailed";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::IoError: return "IoError";
  }
  return "Unknown";
}

bool is_numerical(ErrorCode code) {
  switch (code) {
    case ErrorCode::NotPositiveDefinite:
    case ErrorCode::NoConvergedWindows:
    case ErrorCode::ChainDiverged:
    case ErrorCode::NoSamples:
      return true;
    default:
      return false;
  }
}

}  // namespace nsgp
