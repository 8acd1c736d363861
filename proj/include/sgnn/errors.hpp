#ifndef SGNN_ERRORS_HPP
#define SGNN_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace sgnn {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Configuration values that cannot describe a valid object (e.g. C does not divide N).
class InvalidConfig : public Error {
public:
    using Error::Error;
};

/// Malformed arguments: wrong shapes, asymmetric matrices, out-of-range indices.
class InvalidInput : public Error {
public:
    using Error::Error;
};

/// Input is well formed but numerically degenerate (zero graph, coincident agents).
class DegenerateInput : public Error {
public:
    using Error::Error;
};

class UnsupportedKind : public Error {
public:
    using Error::Error;
};

/// A spectrum or argument fell outside the frequency domain a constant was estimated on.
class DomainViolation : public Error {
public:
    using Error::Error;
};

/// Training or simulation produced non-finite or runaway values.
class Divergence : public Error {
public:
    using Error::Error;
};

/// Enumeration oracle would exceed its size guard.
class SizeGuard : public Error {
public:
    using Error::Error;
};

}  // namespace sgnn

#endif  // SGNN_ERRORS_HPP
