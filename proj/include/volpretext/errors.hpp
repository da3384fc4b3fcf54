#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace vpx {

// Error taxonomy. The CLI maps these onto exit codes:
// ConfigError -> 2, DataError/FormatError -> 3, NumericError -> 4.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Bad parameters, incompatible shapes, unknown config keys.
struct ConfigError : Error {
    using Error::Error;
};

// Shape/dimension mismatch; the message names the offending axis.
struct ShapeError : ConfigError {
    using ConfigError::ConfigError;
};

// Out-of-range scalar parameter (dropout rate, fold count, ...).
struct ParamError : ConfigError {
    using ConfigError::ConfigError;
};

// Missing or inconsistent records, empty datasets, bad labels.
struct DataError : Error {
    using Error::Error;
};

// File parse failure; carries the byte offset where parsing stopped.
struct FormatError : DataError {
    FormatError(const std::string& msg, std::size_t byte_offset)
        : DataError(msg + " (byte offset " + std::to_string(byte_offset) + ")"),
          offset(byte_offset) {}
    std::size_t offset;
};

// NaN/Inf escaped a numeric kernel.
struct NumericError : Error {
    using Error::Error;
};

} // namespace vpx
