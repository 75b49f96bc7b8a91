#pragma once

#include <stdexcept>
#include <string>

namespace opd {

/// Base for every error raised by the library. The CLI maps the category to an
/// exit code, so each subclass reports a stable category string.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
  virtual const char* category() const noexcept = 0;
};

#define OPD_DEFINE_ERROR(Name, Category)                              \
  class Name : public Error {                                          \
   public:                                                             \
    using Error::Error;                                                \
    const char* category() const noexcept override { return Category; } \
  };

OPD_DEFINE_ERROR(DimensionError, "dimension")
OPD_DEFINE_ERROR(ContractError, "contract")
OPD_DEFINE_ERROR(ConfigError, "config")
OPD_DEFINE_ERROR(ParseError, "parse")
OPD_DEFINE_ERROR(ValidationError, "validation")
OPD_DEFINE_ERROR(EmptySourceError, "empty-source")
OPD_DEFINE_ERROR(NumericError, "numeric")
OPD_DEFINE_ERROR(LeakageError, "leakage")
OPD_DEFINE_ERROR(IoError, "io")

#undef OPD_DEFINE_ERROR

}  // namespace opd
