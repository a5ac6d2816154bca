#pragma once

#include <stdexcept>
#include <string>

namespace radarfuse {

/// Base class for everything this library throws on purpose.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& what) : std::runtime_error(what) {}
};

/// API misuse: wrong processing domain, mismatched dimensions, invalid
/// argument values, violated preconditions. Maps to CLI exit code 2.
class ContractError : public Error {
public:
    explicit ContractError(const std::string& what) : Error(what) {}
};

/// Malformed on-disk data. Messages carry the path and, where known, the
/// byte offset or line number of the defect. Maps to CLI exit code 2.
class ParseError : public Error {
public:
    explicit ParseError(const std::string& what) : Error(what) {}
};

/// Filesystem or stream failure. Maps to CLI exit code 2.
class IoError : public Error {
public:
    explicit IoError(const std::string& what) : Error(what) {}
};

/// Numerically degenerate input: low-SNR calibration scenes, collinear
/// point sets, singular fits, empty evaluation masks. Maps to CLI exit
/// code 3.
class NumericError : public Error {
public:
    explicit NumericError(const std::string& what) : Error(what) {}
};

}  // namespace radarfuse
