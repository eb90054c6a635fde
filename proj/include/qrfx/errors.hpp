#pragma once

#include <stdexcept>
#include <string>

namespace qrfx {

// Base class for all library errors. Catch this to handle anything thrown by qrfx.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& what_arg) : std::runtime_error(what_arg) {}
};

// A function argument violates its documented precondition.
class InvalidInput : public Error {
public:
    using Error::Error;
};

// A configuration struct is internally inconsistent or out of range.
class InvalidConfig : public Error {
public:
    using Error::Error;
};

// Least-squares design matrix is rank deficient.
class SingularDesign : public Error {
public:
    using Error::Error;
};

// A MIDAS filter was asked for more low-frequency history than exists.
class InsufficientHistory : public Error {
public:
    using Error::Error;
};

// An alignment or trim step left no usable rows.
class InsufficientData : public Error {
public:
    using Error::Error;
};

// Permutation importance requires out-of-bag observations and found none.
class InsufficientOob : public Error {
public:
    using Error::Error;
};

// An iterative procedure lost all numerical mass (e.g. every mixture
// component underflowed for some unit). Carries the iteration index when
// raised from inside the EM loop.
class NumericalDegeneracy : public Error {
public:
    using Error::Error;
};

// Malformed external data (CSV cells, missing columns, bad headers).
class DataError : public Error {
public:
    using Error::Error;
};

// Filesystem-level failure (unreadable path, write failure).
class IoError : public Error {
public:
    using Error::Error;
};

} // namespace qrfx
