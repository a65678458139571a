#pragma once

#include <stdexcept>
#include <string>

namespace tnet {

// Error categories double as CLI exit codes (0 is success).
enum class ErrorCategory : int {
  parse = 10,
  data = 11,
  config = 12,
  shape = 13,
  contract = 14,
  generation = 15,
  training = 16,
  version = 17,
  format = 18,
  fold = 19,
  usage = 20,
};

inline const char* category_name(ErrorCategory c) {
  switch (c) {
    case ErrorCategory::parse: return "ParseError";
    case ErrorCategory::data: return "DataError";
    case ErrorCategory::config: return "ConfigError";
    case ErrorCategory::shape: return "ShapeError";
    case ErrorCategory::contract: return "ContractError";
    case ErrorCategory::generation: return "GenerationError";
    case ErrorCategory::training: return "TrainingError";
    case ErrorCategory::version: return "VersionError";
    case ErrorCategory::format: return "FormatError";
    case ErrorCategory::fold: return "FoldError";
    case ErrorCategory::usage: return "UsageError";
  }
  return "Error";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCategory category, const std::string& what)
      : std::runtime_error(what), category_(category) {}
  ErrorCategory category() const noexcept { return category_; }

 private:
  ErrorCategory category_;
};

#define TNET_DEFINE_ERROR(Name, cat)                                  \
  class Name : public Error {                                         \
   public:                                                            \
    explicit Name(const std::string& what) : Error(ErrorCategory::cat, what) {} \
  };

TNET_DEFINE_ERROR(DataError, data)
TNET_DEFINE_ERROR(ConfigError, config)
TNET_DEFINE_ERROR(ShapeError, shape)
TNET_DEFINE_ERROR(ContractError, contract)
TNET_DEFINE_ERROR(GenerationError, generation)
TNET_DEFINE_ERROR(VersionError, version)
TNET_DEFINE_ERROR(FormatError, format)
TNET_DEFINE_ERROR(FoldError, fold)
TNET_DEFINE_ERROR(UsageError, usage)

#undef TNET_DEFINE_ERROR

// Row index is zero-based, counted over data rows (header excluded).
class ParseError : public Error {
 public:
  ParseError(const std::string& what, long row)
      : Error(ErrorCategory::parse, what), row_(row) {}
  long row() const noexcept { return row_; }

 private:
  long row_;
};

class TrainingError : public Error {
 public:
  TrainingError(const std::string& what, std::string batch_ids)
      : Error(ErrorCategory::training, what + " [batch: " + batch_ids + "]"),
        batch_ids_(std::move(batch_ids)) {}
  const std::string& batch_ids() const noexcept { return batch_ids_; }

 private:
  std::string batch_ids_;
};

}  // namespace tnet
