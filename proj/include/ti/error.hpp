#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace ti {

enum class ErrorCode {
    EmptyDataset,
    SingleArm,
    NonFinite,
    RaggedCovariates,
    InvalidTreatment,
    ArmTooSmall,
    DegenerateFold,
    FitFailure,
    SingularFit,
    MissingId,
    DuplicateId,
    SchemaError,
    LengthMismatch,
    KTooLarge,
    PropensityAtBoundary,
    ConfigInvalid,
    TooFewReplications,
    InvalidArgument,
    Io,
};

std::string_view error_code_name(ErrorCode code);

/// True for errors caused by numerical trouble during fitting or estimation
/// (as opposed to malformed input).
bool is_numeric_error(ErrorCode code);

class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& message)
        : std::runtime_error(message), code_(code) {}

    ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

}  // namespace ti
