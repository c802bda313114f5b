#pragma once

#include <stdexcept>
#include <string>

namespace ugp {

// Bad argument or configuration supplied by the caller.
class InvalidArgument : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// Malformed or unreadable input data (scans, poses, manifests).
class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// A numerical procedure could not produce a result for this input,
// e.g. rank-deficient correspondences or too few matches.
class EstimationError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Internal contract violation.
class InvariantError : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

}  // namespace ugp
