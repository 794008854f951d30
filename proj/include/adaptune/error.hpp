#pragma once

#include <stdexcept>
#include <string>

namespace adaptune {

/// Base of every error raised by the library. `kind()` is a short stable tag
/// the CLI maps onto exit codes.
class Error : public std::runtime_error {
 public:
  Error(std::string kind, const std::string& what)
      : std::runtime_error(what), kind_(std::move(kind)) {}
  const std::string& kind() const noexcept { return kind_; }

 private:
  std::string kind_;
};

#define ADAPTUNE_DEFINE_ERROR(Name, tag)                              \
  class Name : public Error {                                          \
   public:                                                             \
    explicit Name(const std::string& what) : Error(tag, what) {}      \
  };

// configuration / contract violations (CLI exit 2)
ADAPTUNE_DEFINE_ERROR(ConfigError, "config")
ADAPTUNE_DEFINE_ERROR(DimensionError, "dimension")
ADAPTUNE_DEFINE_ERROR(IndexError, "index")
ADAPTUNE_DEFINE_ERROR(StepIndexError, "step-index")
// data problems (CLI exit 3)
ADAPTUNE_DEFINE_ERROR(DataError, "data")
ADAPTUNE_DEFINE_ERROR(LabelError, "label")
ADAPTUNE_DEFINE_ERROR(LengthError, "length")
ADAPTUNE_DEFINE_ERROR(RateError, "rate")
ADAPTUNE_DEFINE_ERROR(FormatError, "format")
ADAPTUNE_DEFINE_ERROR(IoError, "io")
ADAPTUNE_DEFINE_ERROR(StratificationError, "stratification")
ADAPTUNE_DEFINE_ERROR(EmptyEvaluationError, "empty-evaluation")
// numerics (CLI exit 4)
ADAPTUNE_DEFINE_ERROR(NumericError, "numeric")
ADAPTUNE_DEFINE_ERROR(DegeneracyError, "degeneracy")

#undef ADAPTUNE_DEFINE_ERROR

}  // namespace adaptune
