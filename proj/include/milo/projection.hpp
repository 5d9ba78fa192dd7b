#pragma once

// Inference-time feasibility projection and descent diagnostics.
//
//   repeat:  x_hat = phi(x_bar);  V = |g(x_hat, xi)_+|_1
//            stop if V <= eps
//            x_bar <- x_bar - eta * grad_{x_bar} V      (through the surrogate)
//
// The smooth surrogate V~ replaces the hard directions b by the soft values v,
// which makes it C^1 away from floor jumps; the descent checks run on V~.

#include "milo/correction.hpp"
#include "milo/diff.hpp"
#include "milo/net.hpp"
#include "milo/problems.hpp"

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <vector>

namespace milo {

struct ProjectionConfig {
    double step = 0.01;
    int max_iter = 1000;
    double tol = 1e-6;
    std::optional<double> lipschitz; // when set, the step is capped at 1/L
    bool record_smooth = false;      // also trace V~ at every iterate

    void validate() const;
    double effective_step() const;
};

enum class Termination { Feasible, MaxIter };
const char* to_string(Termination t);

struct ProjectionReport {
    int iterations = 0;
    std::vector<double> violation;       // V at x_bar_0 .. x_bar_k, length iterations + 1
    std::vector<double> grad_norm;       // |grad V| at x_bar_0 .. x_bar_{k-1}, length iterations
    std::vector<double> smooth_violation; // V~ per iterate when recorded, else empty
    Index max_active = 0;                // largest active set seen along the path
    Termination termination = Termination::MaxIter;
    Vector relaxed;                      // final x_bar
    MixedIntegerSolution solution;       // phi(final x_bar)
};

/// Maps a 1 x n relaxed row to a 1 x n_c constraint row on the tape.
using ConstraintPath = std::function<Var(Tape&, Var)>;
/// Maps a relaxed vector to the hard corrected solution.
using HardMap = std::function<MixedIntegerSolution(const Vector&)>;

/// Algorithm core over arbitrary differentiable maps; `smooth` is only used
/// when config.record_smooth is set.
ProjectionReport project_path(const Vector& xbar0, const ConstraintPath& hard, const HardMap& corrected,
                              const ProjectionConfig& config, const ConstraintPath& smooth = {});

/// Projection through the correction layer; noise is always disabled.
ProjectionReport project(const Vector& xbar0, const Vector& xi, const CoefficientSet& coeffs,
                         const MlpWeights& delta, const CorrectionConfig& correction,
                         const ProjectionConfig& config);

/// V~ for one instance and its gradient in x_bar.
struct SmoothValue {
    double value = 0.0;
    Vector gradient;
};
SmoothValue smooth_violation(const Vector& xbar, const Vector& xi, const CoefficientSet& coeffs,
                             const MlpWeights& delta, const CorrectionConfig& correction);

/// Fixed-step gradient descent on a scalar graph of a 1 x n row. Both traces
/// have iterations + 1 entries (value and gradient norm at every iterate).
struct DescentTrace {
    std::vector<double> value;
    std::vector<double> grad_norm;
    Vector final_point;
};
DescentTrace gradient_descent(const GraphFn& objective, const Vector& x0, double step, int iterations);

struct DescentDiagnostics {
    bool monotone = true;
    bool sum_bound = true;
    int checked = 0;              // number of K values tested
    int first_failure = -1;       // first failing K, or -1
    double min_grad_sq = 0.0;     // min_{k<K} |grad|^2 at the last checked K
    double bound = 0.0;           // 2 (V0 - VK) / (eta K) at the last checked K
};

/// Checks V(k+1) <= V(k) + 1e-9 (1 + |V(k)|) for all k, and
/// min_{k<K} |grad_k|^2 <= 2 (V0 - VK) / (eta K) for every K >= 1 at which the
/// iterate is still infeasible (VK > 0); an all-zero trace checks K = 1.
DescentDiagnostics descent_diagnostics(const std::vector<double>& value, const std::vector<double>& grad_norm,
                                       double step);

/// ceil(2 V0 / (eta eps)); 0 when V0 = 0.
std::int64_t k_epsilon(double v0, double step, double eps);

/// L = n_c (G_g L_phi + G_phi L_g) for one instance with the given active cap.
LipschitzEstimate theory_lipschitz(const CoefficientSet& coeffs, const Vector& xi, const MlpWeights& delta,
                                   const CorrectionConfig& correction, Index active_cap, double radius);

/// CSV with header iteration,V,V_smooth,grad_norm.
void write_trace_csv(std::ostream& out, const ProjectionReport& report);

} // namespace milo
