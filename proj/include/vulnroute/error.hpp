#pragma once

#include <stdexcept>
#include <string>

namespace vulnroute {

enum class ErrorKind {
  // taxonomy
  DuplicateType,
  EmptyCategory,
  DuplicateCategoryId,
  // corpus
  UnknownLabel,
  MalformedRecord,
  DuplicateId,
  EmptyDataset,
  NoPositives,
  // structuring / knowledge base
  EmptyInput,
  EmbeddingDimensionMismatch,
  EmptyKnowledgeBase,
  UnknownCategory,
  StoreFormat,
  // gateway
  ConfigMissing,
  ProviderUnavailable,
  DimensionDrift,
  // evolution / pipeline / evaluation
  AllCategoriesEmpty,
  MissingDetectorPrompt,
  MissingGold,
  InvalidArgument,
  Io,
};

const char* to_string(ErrorKind kind) noexcept;

// Base for every error this library raises. `kind` identifies the failure in
// tests; `is_provider_error()` selects the CLI exit code (3 vs 2).
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(std::string(to_string(kind)) + ": " + message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }
  bool is_provider_error() const noexcept {
    return kind_ == ErrorKind::ProviderUnavailable || kind_ == ErrorKind::DimensionDrift;
  }

 private:
  ErrorKind kind_;
};

}  // namespace vulnroute
