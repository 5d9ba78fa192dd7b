#pragma once

// Convex quadratic violation problems for the descent checks:
//
//   g_j(x) = 1/2 (x - c_j)' H_j (x - c_j) - r_j,   V(x) = sum_j max(0, g_j(x))
//
// with the identity as correction map. Centres cluster around a common point
// so the feasible set is nonempty, and starts lie well outside every ellipsoid.
// Each g_j has an H_j-Lipschitz gradient, so L = m max_j |H_j| bounds the
// curvature of every active sum.

#include "milo/diff.hpp"
#include "milo/rng.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <vector>

namespace milo::testing {

struct ConvexProblem {
    std::vector<Matrix> hessian;
    std::vector<Vector> center;
    std::vector<double> radius;
    Vector start;
    double lipschitz = 0.0;

    Index dim() const { return start.size(); }

    /// 1 x m constraint row for a 1 x n leaf.
    Var constraints(Tape& tape, Var x) const
    {
        Var out;
        for (std::size_t j = 0; j < hessian.size(); ++j) {
            const Var d = x - tape.constant(center[j].transpose());
            const Var q = scale(sum(mul(matmul(d, tape.constant(hessian[j])), d)), 0.5);
            const Var g = q - tape.scalar_constant(radius[j]);
            out = j == 0 ? g : concat_cols(out, g);
        }
        return out;
    }

    GraphFn violation() const
    {
        return [this](Tape& tape, Var x) { return positive_part_l1(constraints(tape, x)); };
    }
};

inline ConvexProblem random_convex_problem(Rng& rng)
{
    ConvexProblem p;
    const Index n = 2 + static_cast<Index>(rng.next_u64() % 5);
    const int m = 1 + static_cast<int>(rng.next_u64() % 4);
    const Vector common = rng.normal_matrix(n, 1, 0.0, 1.0);
    double max_curv = 0.0;
    for (int j = 0; j < m; ++j) {
        const Matrix b = rng.normal_matrix(n, n, 0.0, 1.0);
        Matrix h = b.transpose() * b / static_cast<double>(n) + 0.1 * Matrix::Identity(n, n);
        const double top = Eigen::SelfAdjointEigenSolver<Matrix>(h).eigenvalues().maxCoeff();
        h *= rng.uniform(0.5, 2.0) / top;
        max_curv = std::max(max_curv, Eigen::SelfAdjointEigenSolver<Matrix>(h).eigenvalues().maxCoeff());
        p.hessian.push_back(h);
        p.center.push_back(common + rng.normal_matrix(n, 1, 0.0, 0.2));
        p.radius.push_back(rng.uniform(0.5, 1.0));
    }
    Vector dir = rng.normal_matrix(n, 1, 0.0, 1.0);
    dir.normalize();
    p.start = common + rng.uniform(3.0, 5.0) * dir;
    p.lipschitz = static_cast<double>(m) * max_curv;
    return p;
}

inline std::vector<ConvexProblem> convex_suite(std::uint64_t seed, int count = 20)
{
    Rng rng(seed);
    std::vector<ConvexProblem> suite;
    for (int i = 0; i < count; ++i) suite.push_back(random_convex_problem(rng));
    return suite;
}

/// First k with value[k] < eps, or -1.
inline int first_entry(const std::vector<double>& value, double eps)
{
    for (std::size_t k = 0; k < value.size(); ++k) {
        if (value[k] < eps) return static_cast<int>(k);
    }
    return -1;
}

} // namespace milo::testing
