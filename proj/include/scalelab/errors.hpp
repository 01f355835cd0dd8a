#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace scalelab {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ValidationError : public Error {
public:
    using Error::Error;
};

// Non-finite values or runaway loss during training or integration.
class DivergedError : public Error {
public:
    DivergedError(const std::string& what, std::int64_t step)
        : Error(what + " (step " + std::to_string(step) + ")"), step_(step) {}
    std::int64_t step() const noexcept { return step_; }

private:
    std::int64_t step_;
};

class NonConvergenceError : public Error {
public:
    NonConvergenceError(const std::string& what, double residual)
        : Error(what + " (residual " + std::to_string(residual) + ")"), residual_(residual) {}
    double residual() const noexcept { return residual_; }

private:
    double residual_;
};

class IllConditionedError : public Error {
public:
    using Error::Error;
};

class NoSolutionError : public Error {
public:
    using Error::Error;
};

} // namespace scalelab
