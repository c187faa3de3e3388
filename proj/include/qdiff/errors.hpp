#pragma once

#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace qdiff {

/// Root of every error thrown by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class NotFound : public Error {
public:
    using Error::Error;
};

class InvalidConfig : public Error {
public:
    using Error::Error;
};

/// A simulation step produced a non-finite state or cost.
class NumericalError : public Error {
public:
    using Error::Error;
};

class UnsupportedScheme : public Error {
public:
    using Error::Error;
};

/// Malformed, truncated or mismatched persisted artifact.
class FormatError : public Error {
public:
    using Error::Error;
};

/// An iterative solver hit its iteration cap. Carries the last iterate so
/// callers can still inspect it.
class NotConverged : public Error {
public:
    NotConverged(const std::string& what, std::vector<double> last_q, double residual)
        : Error(what), last_q_(std::move(last_q)), residual_(residual) {}

    const std::vector<double>& last_iterate() const noexcept { return last_q_; }
    double residual() const noexcept { return residual_; }

private:
    std::vector<double> last_q_;
    double residual_;
};

}  // namespace qdiff
