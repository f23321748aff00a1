// Exception types shared by every module

#pragma once

#include <stdexcept>
#include <string>

namespace isotherm {

// Bad shapes, non-Hermitian inputs, malformed arguments.
struct InvalidInput : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

// A scalar function is undefined on part of a spectrum (ln of a negative eigenvalue, ...).
struct DomainError : std::domain_error {
    using std::domain_error::domain_error;
};

// Evaluation point outside the schedule interval.
struct RangeError : std::out_of_range {
    using std::out_of_range::out_of_range;
};

// Dimension caps exceeded.
struct ResourceError : std::length_error {
    using std::length_error::length_error;
};

// Adaptive integration could not proceed (step-size underflow, non-finite state).
class IntegrationError : public std::runtime_error {
public:
    IntegrationError(const std::string& what, double s)
        : std::runtime_error(what + " (at s = " + std::to_string(s) + ")"), s_(s) {}
    double failing_s() const noexcept { return s_; }

private:
    double s_;
};

// Finite-difference step in the cancellation regime.
class StepSizeError : public std::runtime_error {
public:
    StepSizeError(const std::string& what, double suggested_h)
        : std::runtime_error(what + " (suggested h = " + std::to_string(suggested_h) + ")"),
          suggested_(suggested_h) {}
    double suggested_step() const noexcept { return suggested_; }

private:
    double suggested_;
};

struct InsufficientData : std::runtime_error {
    using std::runtime_error::runtime_error;
};

} // namespace isotherm
