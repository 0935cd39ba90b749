#ifndef LPROBE_ERRORS_HPP
#define LPROBE_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace lprobe {

/// Base of every error raised by the library. The CLI maps UsageError to
/// exit code 2 and everything else to 1.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

#define LPROBE_DEFINE_ERROR(Name)              \
    class Name : public Error {                \
    public:                                    \
        using Error::Error;                    \
    }

LPROBE_DEFINE_ERROR(DimensionError);
LPROBE_DEFINE_ERROR(IndexError);
LPROBE_DEFINE_ERROR(NumericError);
LPROBE_DEFINE_ERROR(IoError);
LPROBE_DEFINE_ERROR(FormatError);
LPROBE_DEFINE_ERROR(CorruptionError);
LPROBE_DEFINE_ERROR(ValidationError);
LPROBE_DEFINE_ERROR(VocabError);
LPROBE_DEFINE_ERROR(ProbeFormatError);
LPROBE_DEFINE_ERROR(TruncationError);
LPROBE_DEFINE_ERROR(TemplateError);
LPROBE_DEFINE_ERROR(EmptyProbeError);
LPROBE_DEFINE_ERROR(ConfigError);
LPROBE_DEFINE_ERROR(InitError);
LPROBE_DEFINE_ERROR(TrainingError);
LPROBE_DEFINE_ERROR(MetricError);
LPROBE_DEFINE_ERROR(ComparisonError);
LPROBE_DEFINE_ERROR(SetupError);
LPROBE_DEFINE_ERROR(UsageError);

#undef LPROBE_DEFINE_ERROR

/// Schema failures are a kind of validation failure.
class SchemaError : public ValidationError {
public:
    using ValidationError::ValidationError;
};

}  // namespace lprobe

#endif
