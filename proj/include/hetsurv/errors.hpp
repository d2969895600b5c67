#pragma once

#include <stdexcept>
#include <string>

namespace hetsurv {

// Base class for all library errors. Subclasses map onto CLI exit codes:
// validation-type errors exit 1, runtime-type errors exit 2.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Shape disagreement between tensors or model/config dims.
struct DimensionError : Error {
    using Error::Error;
};

// Invalid configuration value (rate >= 1, unknown key, bad scheme string...).
struct ConfigError : Error {
    using Error::Error;
};

// Graph schema violations: unknown relation, unknown gene group, key mismatch.
struct SchemaError : Error {
    using Error::Error;
};

// Malformed input file.
struct ParseError : Error {
    using Error::Error;
};

// Non-finite values or numerically undefined results.
struct NumericError : Error {
    using Error::Error;
};

// A requested modality is absent on a patient.
struct MissingModalityError : Error {
    using Error::Error;
};

// A survival statistic is undefined on the given data (no comparable pairs,
// zero log-rank variance, all-zero reconstruction target).
struct StatError : Error {
    using Error::Error;
};

// Training cannot proceed (zero-event cohort and similar).
struct TrainError : Error {
    using Error::Error;
};

// Checkpoint incompatible with the current configuration.
struct CheckpointError : Error {
    using Error::Error;
};

// Filesystem failures.
struct IoError : Error {
    using Error::Error;
};

}  // namespace hetsurv
