#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace swarmfield {

enum class ErrorKind {
    InvalidArgument,
    NonFiniteState,
    DensityFloor,
    MassMismatch,
    SolverStall,
    NoConvergence,
    NotZeroMean,
    SolverDiverged,
    NotAFixedPoint,
    FlowEscape,
    CrossCheckFailure,
    NotInvariant,
    WindowEmpty,
    UnsupportedTransform,
    SchemaError,
    InitializerUnknown,
};

inline const char* to_string(ErrorKind kind) {
    switch (kind) {
        case ErrorKind::InvalidArgument: return "InvalidArgument";
        case ErrorKind::NonFiniteState: return "NonFiniteState";
        case ErrorKind::DensityFloor: return "DensityFloor";
        case ErrorKind::MassMismatch: return "MassMismatch";
        case ErrorKind::SolverStall: return "SolverStall";
        case ErrorKind::NoConvergence: return "NoConvergence";
        case ErrorKind::NotZeroMean: return "NotZeroMean";
        case ErrorKind::SolverDiverged: return "SolverDiverged";
        case ErrorKind::NotAFixedPoint: return "NotAFixedPoint";
        case ErrorKind::FlowEscape: return "FlowEscape";
        case ErrorKind::CrossCheckFailure: return "CrossCheckFailure";
        case ErrorKind::NotInvariant: return "NotInvariant";
        case ErrorKind::WindowEmpty: return "WindowEmpty";
        case ErrorKind::UnsupportedTransform: return "UnsupportedTransform";
        case ErrorKind::SchemaError: return "SchemaError";
        case ErrorKind::InitializerUnknown: return "InitializerUnknown";
    }
    return "Unknown";
}

/// Base error for every failure raised by the library. `kind()` is the
/// machine-readable category; `what()` carries the human context.
class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& message)
        : std::runtime_error(std::string(to_string(kind)) + ": " + message), kind_(kind) {}

    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

/// Raised when a controller divides by a density below its floor.
class DensityFloorError : public Error {
public:
    DensityFloorError(double value, double floor, std::ptrdiff_t cell = -1)
        : Error(ErrorKind::DensityFloor,
                "density " + std::to_string(value) + " below floor " + std::to_string(floor) +
                    (cell >= 0 ? " at cell " + std::to_string(cell) : std::string{})),
          value_(value), floor_(floor), cell_(cell) {}

    double value() const noexcept { return value_; }
    double floor() const noexcept { return floor_; }
    std::ptrdiff_t cell() const noexcept { return cell_; }

private:
    double value_;
    double floor_;
    std::ptrdiff_t cell_;
};

/// Schema violation; `path()` is a JSON pointer to the offending key.
class SchemaError : public Error {
public:
    SchemaError(std::string path, const std::string& message)
        : Error(ErrorKind::SchemaError, path + ": " + message), path_(std::move(path)) {}

    const std::string& path() const noexcept { return path_; }

private:
    std::string path_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& message) {
    throw Error(kind, message);
}

inline void require(bool condition, const std::string& message) {
    if (!condition) fail(ErrorKind::InvalidArgument, message);
}

}  // namespace swarmfield
