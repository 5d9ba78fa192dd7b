#pragma once

// Parametric MINLP benchmark families.
//
//   IQP   min 1/2 x'Qx + p'x          s.t. Ax <= b,            x integer
//   INP   min 1/2 x'Qx + p'sin(x)     s.t. A(d)x <= b,         x integer
//         where A(d) adds d to column 0 of A and subtracts it from column 1
//   MIRB  min |a - x|^2 + 50|y - x^2|^2
//         s.t. |x|^2 <= n b,  1'y >= n b / 2,  p'x <= 0,  Q'y <= 0,
//         x real, y integer
//   RB2D  min (a - x)^2 + 50 (y - x^2)^2
//         s.t. y >= b/2,  x^2 <= b,  x <= 0,  y >= 0,  x real, y integer
//
// Constraints are always returned as g(x, xi) = lhs - rhs, feasible iff g <= 0.
// Decision vectors are laid out as [x_real | x_int].

#include "milo/diff.hpp"
#include "milo/tensor.hpp"

#include <cstdint>
#include <string>
#include <string_view>

namespace milo {

enum class Family { IQP, INP, MIRB, Rosenbrock2D };

std::string to_string(Family f);
/// Accepts "iqp", "inp", "mirb", "rb2d" (case-insensitive).
Family parse_family(std::string_view name);

struct Dimensions {
    Index n_real = 0;
    Index n_int = 0;
    Index n_cons = 0;
    Index n_param = 0;

    Index n_vars() const noexcept { return n_real + n_int; }
    friend bool operator==(const Dimensions&, const Dimensions&) = default;
};

/// Fixed per-family data. Immutable after construction.
///
/// IQP/INP: Q is n x n diagonal, p has length n, A is m x n.
/// MIRB:    p has length n and Q is stored as an n x 1 matrix; A is empty.
/// RB2D:    no coefficients.
struct CoefficientSet {
    Family family = Family::IQP;
    Index n = 0;
    Index m = 0;
    std::uint64_t seed = 0;
    Dimensions dims;
    Matrix Q;
    Vector p;
    Matrix A;

    friend bool operator==(const CoefficientSet&, const CoefficientSet&) = default;
};

/// Solution with a real part and an integer-valued part. Construction
/// rejects integer entries that are not exactly integral.
class MixedIntegerSolution {
public:
    MixedIntegerSolution() = default;
    MixedIntegerSolution(Vector real, Vector integer);

    /// Splits [x_real | x_int].
    static MixedIntegerSolution split(const Vector& x, Index n_real);

    const Vector& real() const noexcept { return real_; }
    const Vector& integer() const noexcept { return integer_; }
    Vector stacked() const;

    friend bool operator==(const MixedIntegerSolution&, const MixedIntegerSolution&) = default;

private:
    Vector real_;
    Vector integer_;
};

bool is_integral(const Vector& v);

/// Draws the fixed coefficients. IQP and INP share a draw sequence, so the
/// same (n, m, seed) gives the same Q, p and A for both.
CoefficientSet build_family(Family family, Index n, Index m, std::uint64_t seed);

/// One parameter vector per row (count x n_param).
Matrix sample_instances(const CoefficientSet& coeffs, Index count, std::uint64_t seed);

/// Network input for one instance: IQP b, INP (b, d), MIRB (b, a), RB2D (a, b).
Vector feature_vector(const CoefficientSet& coeffs, const Vector& xi);

// Batched differentiable evaluators. `params` is B x n_param, `x` is B x n_vars.

/// B x 1 objective values.
Var objective(Tape& tape, const CoefficientSet& coeffs, const Matrix& params, Var x);
/// B x n_cons constraint values.
Var constraints(Tape& tape, const CoefficientSet& coeffs, const Matrix& params, Var x);

// Single-instance conveniences.

double objective(const CoefficientSet& coeffs, const Vector& xi, const Vector& x);
double objective(const CoefficientSet& coeffs, const Vector& xi, const MixedIntegerSolution& sol);
Vector constraints(const CoefficientSet& coeffs, const Vector& xi, const Vector& x);
Vector constraints(const CoefficientSet& coeffs, const Vector& xi, const MixedIntegerSolution& sol);

/// Sum of positive parts of g.
double violation(const Vector& g);
double violation(const CoefficientSet& coeffs, const Vector& xi, const MixedIntegerSolution& sol);

/// Bounds on the constraint Jacobian norm (G_g) and its Lipschitz constant
/// (L_g) over the box |x_i| <= radius, for one instance.
struct ConstraintBounds {
    double jacobian_norm = 0.0;
    double jacobian_lipschitz = 0.0;
};
ConstraintBounds constraint_bounds(const CoefficientSet& coeffs, const Vector& xi, double radius);

} // namespace milo
