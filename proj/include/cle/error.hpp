#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace cle {

// Base of every error thrown by the toolkit. The CLI prints what() after an
// "error: " prefix and exits nonzero.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Inconsistent tensor/layer shapes.
class StructuralError : public Error {
public:
    using Error::Error;
};

// API called in the wrong order (e.g. backward before forward).
class UsageError : public Error {
public:
    using Error::Error;
};

// Bad input values (non one-hot targets, empty item lists, ...).
class ValidationError : public Error {
public:
    using Error::Error;
};

// Bad configuration values.
class ConfigError : public Error {
public:
    using Error::Error;
};

class IoError : public Error {
public:
    using Error::Error;
};

// Malformed file content; carries the byte offset where parsing failed.
class ParseError : public Error {
public:
    enum class Kind { UnsupportedFormat, BadHeader, MaxvalTooLarge, Truncated };

    ParseError(Kind kind, std::size_t offset, const std::string& what)
        : Error(what + " (at byte " + std::to_string(offset) + ")"), kind_(kind), offset_(offset), message_(what) {}

    Kind kind() const noexcept { return kind_; }
    std::size_t offset() const noexcept { return offset_; }
    const std::string& message() const noexcept { return message_; }

private:
    Kind kind_;
    std::size_t offset_;
    std::string message_;
};

class CheckpointError : public Error {
public:
    enum class Kind { BadMagic, VersionMismatch, ChecksumMismatch, Truncated, SpecMismatch, Malformed };

    CheckpointError(Kind kind, const std::string& what) : Error(what), kind_(kind) {}

    Kind kind() const noexcept { return kind_; }

private:
    Kind kind_;
};

} // namespace cle
