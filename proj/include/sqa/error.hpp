#pragma once

#include <stdexcept>
#include <string>

namespace sqa {

// Tensor operand shape/contract violation.
struct ShapeError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Invalid architectural or runtime configuration.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Malformed on-disk data (weight files, NetPBM rasters, JSON configs).
struct FormatError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// API misuse (non-scalar loss, invalid label values, empty dataset).
struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Non-finite value detected while running in checked mode.
struct NumericsError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

}  // namespace sqa
