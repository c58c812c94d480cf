#pragma once

#include <stdexcept>
#include <string>

namespace nestsvd {

/// Raised when a caller hands over malformed input (shapes, ranges, non-finite data).
class InputError : public std::invalid_argument {
public:
    explicit InputError(const std::string& what) : std::invalid_argument(what) {}
};

/// Raised when a computation fails to converge or produces non-finite values.
class NumericalError : public std::runtime_error {
public:
    explicit NumericalError(const std::string& what) : std::runtime_error(what) {}
};

/// Raised when training skips more iterations than its anomaly budget allows.
class TrainingAborted : public std::runtime_error {
public:
    explicit TrainingAborted(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace nestsvd
