#pragma once

#include <stdexcept>
#include <string>

namespace fusion {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Tensor dimensions or layer configuration do not agree.
class ShapeError : public Error {
public:
    using Error::Error;
};

/// Caller supplied an out-of-range value or an inconsistent configuration.
class ConfigError : public Error {
public:
    using Error::Error;
};

/// On-disk data is malformed. Subclasses distinguish the failure mode.
class FormatError : public Error {
public:
    using Error::Error;
};

class BadMagicError : public FormatError {
public:
    using FormatError::FormatError;
};

class TruncatedError : public FormatError {
public:
    using FormatError::FormatError;
};

class LabelRangeError : public FormatError {
public:
    using FormatError::FormatError;
};

/// Non-finite values, diverging training, or other numerical breakdown.
class NumericalError : public Error {
public:
    using Error::Error;
};

/// Emits a one-line warning on stderr. Tests may silence it.
void warn(const std::string& message);
void set_warnings_enabled(bool enabled);

} // namespace fusion
