#pragma once

#include <stdexcept>
#include <string>

namespace dualrep {

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ShapeError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct RangeError : std::out_of_range {
    using std::out_of_range::out_of_range;
};

struct NormalizationError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Bad loss inputs: non-unit features, broken pairings.
struct InputError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

struct ManifestError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Raised when training produces a non-finite loss.
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

[[noreturn]] void throw_shape(const std::string& what);

}  // namespace dualrep
