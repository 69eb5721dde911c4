#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace xpose {

/// Base class for all toolkit errors. The three broad subclasses below map
/// failures to distinct CLI exit codes.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

/// Bad parameter values or impossible configurations, detected before work starts.
class ConfigError : public Error {
public:
    using Error::Error;
};

/// Invalid, inconsistent or malformed input data.
class DataError : public Error {
public:
    using Error::Error;
};

/// Numerical failure inside a solver.
class NumericError : public Error {
public:
    using Error::Error;
};

class InvalidGeometryError : public ConfigError {
public:
    using ConfigError::ConfigError;
};

/// A 3D point projected with non-positive depth; carries the offending index.
class BehindSourceError : public DataError {
public:
    BehindSourceError(std::size_t index, double depth_mm)
        : DataError("point " + std::to_string(index) + " is behind the source (z=" +
                    std::to_string(depth_mm) + " mm)"),
          index_(index) {}
    std::size_t index() const noexcept { return index_; }

private:
    std::size_t index_;
};

class InsufficientCorrespondencesError : public DataError {
public:
    using DataError::DataError;
};

class DegenerateConfigurationError : public DataError {
public:
    using DataError::DataError;
};

class NoValidPoseError : public NumericError {
public:
    using NumericError::NumericError;
};

class ShapeMismatchError : public DataError {
public:
    using DataError::DataError;
};

class FrameChainError : public DataError {
public:
    using DataError::DataError;
};

class InfeasibleConfigurationError : public ConfigError {
public:
    using ConfigError::ConfigError;
};

/// Malformed record in a line-delimited file; carries the 1-based line number.
class ParseError : public DataError {
public:
    ParseError(std::size_t line, const std::string& what)
        : DataError("line " + std::to_string(line) + ": " + what), line_(line) {}
    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

}  // namespace xpose
