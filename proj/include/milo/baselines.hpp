#pragma once

// Non-learning reference methods.
//
// solve_relaxation minimizes f + mu |g_+|_1 over the continuous relaxation,
// escalating mu; rr_baseline rounds its result; brute_force_oracle enumerates
// integer assignments in a window around the rounded relaxation.

#include "milo/problems.hpp"

#include <optional>
#include <stdexcept>

namespace milo {

struct RelaxationConfig {
    double mu0 = 1.0;
    double growth = 10.0;
    int rounds = 6;
    int inner_steps = 500;
    double lr = 0.01;
    double tol = 1e-6;

    void validate() const;
};

struct RelaxationResult {
    Vector x;
    double objective = 0.0;
    double violation = 0.0;
    bool success = false; // violation <= tol at termination
    int rounds_used = 0;
};

/// Starts from `x0` when given, otherwise from zero.
RelaxationResult solve_relaxation(const CoefficientSet& coeffs, const Vector& xi, const RelaxationConfig& config,
                                  const std::optional<Vector>& x0 = std::nullopt);

/// Same schedule over the real slice only, with the integer slice held at `x_int`.
RelaxationResult solve_restricted(const CoefficientSet& coeffs, const Vector& xi, const Vector& x_int,
                                  const Vector& real0, const RelaxationConfig& config);

MixedIntegerSolution rr_baseline(const CoefficientSet& coeffs, const Vector& xi, const RelaxationConfig& config);

struct OracleConfig {
    Index window = 2;
    double cap = 1e6;
    double tol = 1e-6; // feasibility tolerance on the violation
    RelaxationConfig relaxation;

    void validate() const;
};

/// Raised when (2W + 1)^n_int exceeds the cap.
class EnumerationCapError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct OracleResult {
    MixedIntegerSolution solution;
    double objective = 0.0;
};

/// Best feasible assignment in the window around rs_round(center), ties
/// resolved to the lexicographically smallest integer part; nullopt when the
/// window holds no feasible point.
std::optional<OracleResult> brute_force_oracle(const CoefficientSet& coeffs, const Vector& xi, const Vector& center,
                                               const OracleConfig& config);

} // namespace milo
