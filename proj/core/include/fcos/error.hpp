#pragma once

#include <stdexcept>
#include <string>

namespace fcos {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Invalid configuration value or unknown name.
class ConfigError : public Error {
public:
    using Error::Error;
};

/// API misuse, e.g. backward without a training-mode forward.
class UsageError : public Error {
public:
    using Error::Error;
};

/// Inconsistent tensor or graph shapes. `node` is the offending layer id, or -1.
class ShapeError : public Error {
public:
    ShapeError(int node, const std::string& what)
        : Error(node >= 0 ? "layer " + std::to_string(node) + ": " + what : what), node_(node) {}
    int node() const noexcept { return node_; }

private:
    int node_;
};

/// NaN or Inf produced by a layer.
class NumericError : public Error {
public:
    NumericError(int node, const std::string& what)
        : Error("non-finite value at layer " + std::to_string(node) + ": " + what), node_(node) {}
    int node() const noexcept { return node_; }

private:
    int node_;
};

/// A layer-removal request that cannot be rewired into a valid graph.
class RemovalError : public Error {
public:
    RemovalError(int unit, const std::string& what)
        : Error("cannot remove unit " + std::to_string(unit) + ": " + what), unit_(unit) {}
    int unit() const noexcept { return unit_; }

private:
    int unit_;
};

/// Data that cannot support the requested computation (e.g. a single class).
class DegenerateDataError : public Error {
public:
    using Error::Error;
};

enum class FormatErrorKind { BadMagic, VersionMismatch, Truncated, ChecksumMismatch, Malformed };

/// Failure while decoding an on-disk container.
class FormatError : public Error {
public:
    FormatError(FormatErrorKind kind, const std::string& what) : Error(what), kind_(kind) {}
    FormatErrorKind kind() const noexcept { return kind_; }

private:
    FormatErrorKind kind_;
};

class IoError : public Error {
public:
    using Error::Error;
};

}  // namespace fcos
