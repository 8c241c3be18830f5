#pragma once

#include <stdexcept>
#include <string>

namespace itn {

enum class ErrorKind {
    NotARotation,
    DegenerateQuaternion,
    DegenerateRotation,
    DegenerateAnchors,
    InvalidPhantomSpec,
    InputShape,
    SizeMismatch,
    EmptyInput,
    TrainingDiverged,
    CheckpointMismatch,
    Predictor,
    Io,
    Config,
};

inline const char* to_string(ErrorKind kind) {
    switch (kind) {
        case ErrorKind::NotARotation: return "not a rotation";
        case ErrorKind::DegenerateQuaternion: return "degenerate quaternion prediction";
        case ErrorKind::DegenerateRotation: return "degenerate rotation prediction";
        case ErrorKind::DegenerateAnchors: return "degenerate anchor prediction";
        case ErrorKind::InvalidPhantomSpec: return "invalid phantom spec";
        case ErrorKind::InputShape: return "input shape error";
        case ErrorKind::SizeMismatch: return "size mismatch";
        case ErrorKind::EmptyInput: return "empty input";
        case ErrorKind::TrainingDiverged: return "training diverged";
        case ErrorKind::CheckpointMismatch: return "checkpoint mismatch";
        case ErrorKind::Predictor: return "predictor failure";
        case ErrorKind::Io: return "i/o error";
        case ErrorKind::Config: return "config error";
    }
    return "error";
}

/// All library failures are reported through this type; `kind()` lets callers
/// map them to exit codes without parsing messages.
class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& detail)
        : std::runtime_error(std::string(to_string(kind)) + (detail.empty() ? "" : ": " + detail)),
          kind_(kind) {}

    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

}  // namespace itn
