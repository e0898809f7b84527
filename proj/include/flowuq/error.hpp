#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace flowuq {

enum class ErrorKind {
  InvalidInput,
  ZeroMarginal,
  ModelEvaluationFailed,
  NoConvergence,
  InvalidElasticity,
  Separation,
  Collinear,
  InsufficientData,
  NotPSD,
  ParseError,
  Io,
  BadQuantileGrid,
  TooManyFailures,
  RankTooLarge,
  TooFewDraws,
  LengthMismatch,
};

constexpr std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::InvalidInput: return "InvalidInput";
    case ErrorKind::ZeroMarginal: return "ZeroMarginal";
    case ErrorKind::ModelEvaluationFailed: return "ModelEvaluationFailed";
    case ErrorKind::NoConvergence: return "NoConvergence";
    case ErrorKind::InvalidElasticity: return "InvalidElasticity";
    case ErrorKind::Separation: return "Separation";
    case ErrorKind::Collinear: return "Collinear";
    case ErrorKind::InsufficientData: return "InsufficientData";
    case ErrorKind::NotPSD: return "NotPSD";
    case ErrorKind::ParseError: return "ParseError";
    case ErrorKind::Io: return "Io";
    case ErrorKind::BadQuantileGrid: return "BadQuantileGrid";
    case ErrorKind::TooManyFailures: return "TooManyFailures";
    case ErrorKind::RankTooLarge: return "RankTooLarge";
    case ErrorKind::TooFewDraws: return "TooFewDraws";
    case ErrorKind::LengthMismatch: return "LengthMismatch";
  }
  return "Unknown";
}

/// All library failures are reported through this type; `kind()` says which.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

inline void require(bool condition, ErrorKind kind, const std::string& what) {
  if (!condition) throw Error(kind, what);
}

}  // namespace flowuq
