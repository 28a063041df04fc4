#ifndef CEMB_ERRORS_HPP_
#define CEMB_ERRORS_HPP_

#include <stdexcept>
#include <string>

namespace cemb {

// Every error raised by the library derives from Error so callers (the CLI in
// particular) can catch one type and still report the specific category.
class Error : public std::runtime_error {
 public:
  Error(const char* category, const std::string& what)
      : std::runtime_error(std::string(category) + ": " + what), category_(category) {}

  const char* category() const noexcept { return category_; }

 private:
  const char* category_;
};

#define CEMB_DEFINE_ERROR(Name, label)                                  \
  class Name : public Error {                                           \
   public:                                                              \
    explicit Name(const std::string& what) : Error(label, what) {}      \
  }

CEMB_DEFINE_ERROR(DimensionError, "dimension error");
CEMB_DEFINE_ERROR(NumericError, "numeric error");
CEMB_DEFINE_ERROR(DegenerateInputError, "degenerate input");
CEMB_DEFINE_ERROR(ArgumentError, "argument error");
CEMB_DEFINE_ERROR(ContractError, "contract error");
CEMB_DEFINE_ERROR(VocabularyError, "vocabulary error");
CEMB_DEFINE_ERROR(ConfigError, "config error");
CEMB_DEFINE_ERROR(FormatError, "format error");
CEMB_DEFINE_ERROR(SpecError, "spec error");
CEMB_DEFINE_ERROR(InsufficientCorpusError, "insufficient corpus");
CEMB_DEFINE_ERROR(SamplingError, "sampling error");
CEMB_DEFINE_ERROR(ParseError, "parse error");
CEMB_DEFINE_ERROR(CorruptionError, "corruption error");
CEMB_DEFINE_ERROR(IoError, "io error");

#undef CEMB_DEFINE_ERROR

}  // namespace cemb

#endif  // CEMB_ERRORS_HPP_
