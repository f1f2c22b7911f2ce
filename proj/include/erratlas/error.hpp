#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace erratlas {

enum class ErrorKind {
  Io,
  Parse,
  Validation,
  UnknownSynset,
  UnknownImage,
  DuplicateImage,
  DuplicateVerdict,
  DimensionMismatch,
  EmptyIndex,
  InvalidArgument,
  MissingTextEmbedding,
  MissingEmbedding,
  EmptyEvaluationSet,
  MissingMeta,
  CategoryMismatch,
  DegenerateFit,
  ChecksumMismatch,
};

constexpr std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::Io: return "IoError";
    case ErrorKind::Parse: return "ParseError";
    case ErrorKind::Validation: return "ValidationError";
    case ErrorKind::UnknownSynset: return "UnknownSynset";
    case ErrorKind::UnknownImage: return "UnknownImage";
    case ErrorKind::DuplicateImage: return "DuplicateImage";
    case ErrorKind::DuplicateVerdict: return "DuplicateVerdict";
    case ErrorKind::DimensionMismatch: return "DimensionMismatch";
    case ErrorKind::EmptyIndex: return "EmptyIndex";
    case ErrorKind::InvalidArgument: return "InvalidArgument";
    case ErrorKind::MissingTextEmbedding: return "MissingTextEmbedding";
    case ErrorKind::MissingEmbedding: return "MissingEmbedding";
    case ErrorKind::EmptyEvaluationSet: return "EmptyEvaluationSet";
    case ErrorKind::MissingMeta: return "MissingMeta";
    case ErrorKind::CategoryMismatch: return "CategoryMismatch";
    case ErrorKind::DegenerateFit: return "DegenerateFit";
    case ErrorKind::ChecksumMismatch: return "ChecksumMismatch";
  }
  return "Error";
}

// Every failure raised by the library carries a kind so callers can separate
// per-image data gaps (soft) from structural problems (hard).
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(std::string(to_string(kind)) + ": " + message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& message) {
  throw Error(kind, message);
}

}  // namespace erratlas
