#pragma once

#include <stdexcept>
#include <string>

namespace protorel {

// Error taxonomy. The CLI maps ConfigError/FormatError to exit code 2,
// everything else to exit code 1.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Shapes do not conform for an operation. Message carries both shapes.
struct ShapeError : Error {
    using Error::Error;
};

// Input outside an op's mathematical domain (sqrt/log of negative, ...).
struct DomainError : Error {
    using Error::Error;
};

// Zero-norm vector fed to a normalization.
struct NormalizationError : Error {
    using Error::Error;
};

// Non-finite value where a finite one is required.
struct NumericError : Error {
    using Error::Error;
};

// Malformed file content (embedding tables, dataset files, checkpoints).
struct FormatError : Error {
    using Error::Error;
};

// Semantically invalid data (class id out of range, ledger violation, ...).
struct ValidationError : Error {
    using Error::Error;
};

// Invalid configuration value or unknown config key.
struct ConfigError : Error {
    using Error::Error;
};

// Missing label in an embedding table.
struct LookupError : Error {
    using Error::Error;
};

struct IoError : Error {
    using Error::Error;
};

}  // namespace protorel
