#pragma once

#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace fda {

enum class ErrorCode {
    DegenerateShape,
    UnstableConfig,
    PlacementError,
    DivergedSimulation,
    SingularKernel,
    DimensionMismatch,
    UnsupportedDimension,
    EmptyArchive,
    InsufficientElites,
    BudgetExhausted,
    DivergedTraining,
    StorageFull,
    ConflictingRunId,
    NotFound,
    CorruptArtifact,
    ValidationError,
    EmptyRegion,
};

constexpr std::string_view to_string(ErrorCode code) {
    switch (code) {
    case ErrorCode::DegenerateShape: return "DegenerateShape";
    case ErrorCode::UnstableConfig: return "UnstableConfig";
    case ErrorCode::PlacementError: return "PlacementError";
    case ErrorCode::DivergedSimulation: return "DivergedSimulation";
    case ErrorCode::SingularKernel: return "SingularKernel";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::UnsupportedDimension: return "UnsupportedDimension";
    case ErrorCode::EmptyArchive: return "EmptyArchive";
    case ErrorCode::InsufficientElites: return "InsufficientElites";
    case ErrorCode::BudgetExhausted: return "BudgetExhausted";
    case ErrorCode::DivergedTraining: return "DivergedTraining";
    case ErrorCode::StorageFull: return "StorageFull";
    case ErrorCode::ConflictingRunId: return "ConflictingRunId";
    case ErrorCode::NotFound: return "NotFound";
    case ErrorCode::CorruptArtifact: return "CorruptArtifact";
    case ErrorCode::ValidationError: return "ValidationError";
    case ErrorCode::EmptyRegion: return "EmptyRegion";
    }
    return "Unknown";
}

/// A field-level complaint attached to a ValidationError.
struct FieldError {
    std::string field;
    std::string message;
};

class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& message, std::vector<FieldError> fields = {})
        : std::runtime_error(std::string(to_string(code)) + ": " + message),
          code_(code), detail_(message), fields_(std::move(fields)) {}

    ErrorCode code() const noexcept { return code_; }
    const std::string& detail() const noexcept { return detail_; }
    const std::vector<FieldError>& fields() const noexcept { return fields_; }

private:
    ErrorCode code_;
    std::string detail_;
    std::vector<FieldError> fields_;
};

}  // namespace fda
