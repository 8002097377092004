#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace atme {

// Error taxonomy. Everything user-facing derives from AtmeError so the CLI
// can map exceptions to exit codes (config/usage -> 2, runtime -> 1).
struct AtmeError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ConfigError : AtmeError {
    using AtmeError::AtmeError;
};

struct DataError : AtmeError {
    using AtmeError::AtmeError;
};

struct ShapeError : AtmeError {
    using AtmeError::AtmeError;
};

struct CheckpointError : AtmeError {
    using AtmeError::AtmeError;
};

struct AssetError : AtmeError {
    using AtmeError::AtmeError;
};

// Raised when a training step produces a non-finite loss. Aborting beats
// silently skipping the step: divergence is exactly what the monitor is
// supposed to surface.
struct TrainingAborted : AtmeError {
    using AtmeError::AtmeError;
};

inline void check(bool cond, const std::string& msg) {
    if (!cond) throw AtmeError(msg);
}

}  // namespace atme
