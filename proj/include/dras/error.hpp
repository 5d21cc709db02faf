#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace dras {

enum class Errc {
  MalformedFilename,
  NegativeAge,
  DecodeError,
  NonRGBInput,
  TooFewRecords,
  RankOutOfRange,
  ShapeMismatch,
  LengthMismatch,
  InvalidDim,
  ScoreOutOfRange,
  InvalidComponent,
  InvalidConfig,
  NonFiniteLoss,
  EmptyDataset,
  DivergenceDetected,
  WrongStageCheckpoint,
  CorruptCheckpoint,
  MissingClassifier,
  MissingReference,
  MissingIdentityTags,
  ServiceUnavailable,
  EmptyGroup,
  IoError,
  UsageError,
};

constexpr std::string_view to_string(Errc code) {
  switch (code) {
    case Errc::MalformedFilename: return "MalformedFilename";
    case Errc::NegativeAge: return "NegativeAge";
    case Errc::DecodeError: return "DecodeError";
    case Errc::NonRGBInput: return "NonRGBInput";
    case Errc::TooFewRecords: return "TooFewRecords";
    case Errc::RankOutOfRange: return "RankOutOfRange";
    case Errc::ShapeMismatch: return "ShapeMismatch";
    case Errc::LengthMismatch: return "LengthMismatch";
    case Errc::InvalidDim: return "InvalidDim";
    case Errc::ScoreOutOfRange: return "ScoreOutOfRange";
    case Errc::InvalidComponent: return "InvalidComponent";
    case Errc::InvalidConfig: return "InvalidConfig";
    case Errc::NonFiniteLoss: return "NonFiniteLoss";
    case Errc::EmptyDataset: return "EmptyDataset";
    case Errc::DivergenceDetected: return "DivergenceDetected";
    case Errc::WrongStageCheckpoint: return "WrongStageCheckpoint";
    case Errc::CorruptCheckpoint: return "CorruptCheckpoint";
    case Errc::MissingClassifier: return "MissingClassifier";
    case Errc::MissingReference: return "MissingReference";
    case Errc::MissingIdentityTags: return "MissingIdentityTags";
    case Errc::ServiceUnavailable: return "ServiceUnavailable";
    case Errc::EmptyGroup: return "EmptyGroup";
    case Errc::IoError: return "IoError";
    case Errc::UsageError: return "UsageError";
  }
  return "Unknown";
}

class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

}  // namespace dras
