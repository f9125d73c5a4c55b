#pragma once

#include <stdexcept>
#include <string>

namespace ductnav {

/// A function was called with arguments outside its documented domain.
struct PreconditionError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

/// Bad or inconsistent run configuration (unknown key, invalid value, hash mismatch).
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// File-system or encoding failure while persisting or loading artifacts.
struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Non-finite values surfaced where the caller must stop (training faults).
struct NumericalFault : std::runtime_error {
    using std::runtime_error::runtime_error;
};

}  // namespace ductnav
