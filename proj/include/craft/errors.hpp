#pragma once

#include <stdexcept>
#include <string>

namespace craft {

/// Broad failure class, used by the CLI to pick an exit code.
enum class ErrorCategory { Config, Data, Numeric };

/// Base of every library error. `name()` is the stable identifier surfaced in
/// CLI error JSON (e.g. "ShapeError").
class Error : public std::runtime_error {
 public:
  Error(std::string name, ErrorCategory category, const std::string& message)
      : std::runtime_error(message), name_(std::move(name)), category_(category) {}

  const std::string& name() const noexcept { return name_; }
  ErrorCategory category() const noexcept { return category_; }

 private:
  std::string name_;
  ErrorCategory category_;
};

#define CRAFT_DEFINE_ERROR(Type, Category)                                   \
  class Type : public Error {                                                \
   public:                                                                   \
    explicit Type(const std::string& message)                                \
        : Error(#Type, ErrorCategory::Category, message) {}                  \
  };

CRAFT_DEFINE_ERROR(ConfigError, Config)
CRAFT_DEFINE_ERROR(ScheduleError, Config)
CRAFT_DEFINE_ERROR(ShapeError, Data)
CRAFT_DEFINE_ERROR(LabelError, Data)
CRAFT_DEFINE_ERROR(SplitError, Data)
CRAFT_DEFINE_ERROR(AnchorError, Data)
CRAFT_DEFINE_ERROR(ClusterError, Data)
CRAFT_DEFINE_ERROR(EvalError, Data)
CRAFT_DEFINE_ERROR(NormalizationError, Numeric)
CRAFT_DEFINE_ERROR(NumericError, Numeric)

#undef CRAFT_DEFINE_ERROR

/// Malformed embedding or checkpoint file. Carries the byte offset at which
/// decoding failed.
class FormatError : public Error {
 public:
  FormatError(const std::string& message, std::size_t offset)
      : Error("FormatError", ErrorCategory::Data,
              message + " (at byte offset " + std::to_string(offset) + ")"),
        offset_(offset) {}

  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

}  // namespace craft
