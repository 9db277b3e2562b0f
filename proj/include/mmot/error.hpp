#pragma once

#include <stdexcept>
#include <string>

namespace mmot {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Malformed input: bad grids, marginals, payoff parameters or spec files.
class SpecError : public Error {
public:
    using Error::Error;
};

/// The discretized problem has no feasible martingale plan (or a sub-update
/// hit a state that cannot carry mass).
class InfeasibleError : public Error {
public:
    using Error::Error;
};

/// An iterative method stopped before reaching its tolerances.
class ConvergenceError : public Error {
public:
    using Error::Error;
};

}  // namespace mmot
