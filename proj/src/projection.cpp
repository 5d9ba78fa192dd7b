#include "milo/projection.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>
#include <stdexcept>
#include <string>

namespace milo {

void ProjectionConfig::validate() const
{
    if (!(step > 0.0)) {
        throw std::invalid_argument("ProjectionConfig: step must be positive");
    }
    if (max_iter < 1) {
        throw std::invalid_argument("ProjectionConfig: max_iter must be >= 1");
    }
    if (!(tol >= 0.0)) {
        throw std::invalid_argument("ProjectionConfig: tol must be nonnegative");
    }
    if (lipschitz && !(*lipschitz > 0.0)) {
        throw std::invalid_argument("ProjectionConfig: Lipschitz constant must be positive");
    }
}

double ProjectionConfig::effective_step() const
{
    return lipschitz ? std::min(step, 1.0 / *lipschitz) : step;
}

const char* to_string(Termination t)
{
    return t == Termination::Feasible ? "FEASIBLE" : "MAX_ITER";
}

namespace {

struct PathValue {
    double violation = 0.0;
    Index active = 0;
    Vector gradient;
};

PathValue evaluate_path(Tape& tape, const ConstraintPath& path, const Vector& x, bool want_grad)
{
    tape.clear();
    const Var leaf = tape.leaf(x.transpose());
    const Var g = path(tape, leaf);
    const Var v = positive_part_l1(g);
    PathValue out;
    out.violation = v.item();
    out.active = (g.value().array() > 0.0).count();
    if (want_grad) {
        out.gradient = tape.backward(v)[leaf].transpose();
    }
    return out;
}

double smooth_value(Tape& tape, const ConstraintPath& smooth, const Vector& x)
{
    tape.clear();
    return positive_part_l1(smooth(tape, tape.constant(x.transpose()))).item();
}

} // namespace

ProjectionReport project_path(const Vector& xbar0, const ConstraintPath& hard, const HardMap& corrected,
                              const ProjectionConfig& config, const ConstraintPath& smooth)
{
    config.validate();
    if (config.record_smooth && !smooth) {
        throw std::invalid_argument("project_path: smooth trace requested without a smooth path");
    }
    const double eta = config.effective_step();
    ProjectionReport report;
    Vector x = xbar0;
    Tape tape;
    Tape side;
    for (int k = 0;; ++k) {
        const bool can_step = k < config.max_iter;
        PathValue pv = evaluate_path(tape, hard, x, true);
        report.violation.push_back(pv.violation);
        report.max_active = std::max(report.max_active, pv.active);
        if (config.record_smooth) {
            report.smooth_violation.push_back(smooth_value(side, smooth, x));
        }
        if (pv.violation <= config.tol) {
            report.termination = Termination::Feasible;
            break;
        }
        if (!can_step) {
            report.termination = Termination::MaxIter;
            break;
        }
        if (!all_finite(pv.gradient)) {
            throw NonFiniteError("projection: non-finite gradient at iterate " + std::to_string(k));
        }
        report.grad_norm.push_back(pv.gradient.norm());
        x -= eta * pv.gradient;
        report.iterations = k + 1;
    }
    report.relaxed = x;
    report.solution = corrected(x);
    return report;
}

namespace {

ConstraintPath correction_path(const Vector& xi, const CoefficientSet& coeffs, const MlpWeights& delta,
                               const CorrectionConfig& correction, bool smooth)
{
    return [&xi, &coeffs, &delta, correction, smooth](Tape& tape, Var xbar) {
        MlpBinding binding;
        if (uses_correction_net(correction.method)) {
            binding = bind(tape, delta, false);
        }
        const Matrix params = xi.transpose();
        const CorrectionNodes nodes = apply_correction(tape, coeffs.dims, delta, binding, xbar,
                                                       tape.constant(params), correction, ForwardMode::Eval,
                                                       nullptr, nullptr, smooth);
        return constraints(tape, coeffs, params, nodes.solution);
    };
}

CorrectionConfig deterministic(CorrectionConfig c)
{
    c.noise = false;
    return c;
}

} // namespace

ProjectionReport project(const Vector& xbar0, const Vector& xi, const CoefficientSet& coeffs,
                         const MlpWeights& delta, const CorrectionConfig& correction,
                         const ProjectionConfig& config)
{
    if (xbar0.size() != coeffs.dims.n_vars()) {
        throw ShapeError("project: relaxed solution has length " + std::to_string(xbar0.size()) + ", expected " +
                         std::to_string(coeffs.dims.n_vars()));
    }
    const CorrectionConfig det = deterministic(correction);
    const ConstraintPath hard = correction_path(xi, coeffs, delta, det, false);
    const ConstraintPath soft = correction_path(xi, coeffs, delta, det, true);
    const HardMap map = [&](const Vector& x) { return correct(x, xi, coeffs.dims, delta, det); };
    return project_path(xbar0, hard, map, config, soft);
}

SmoothValue smooth_violation(const Vector& xbar, const Vector& xi, const CoefficientSet& coeffs,
                             const MlpWeights& delta, const CorrectionConfig& correction)
{
    Tape tape;
    const PathValue pv =
        evaluate_path(tape, correction_path(xi, coeffs, delta, deterministic(correction), true), xbar, true);
    return {pv.violation, pv.gradient};
}

DescentTrace gradient_descent(const GraphFn& objective, const Vector& x0, double step, int iterations)
{
    if (!(step > 0.0) || iterations < 0) {
        throw std::invalid_argument("gradient_descent: need step > 0 and iterations >= 0");
    }
    DescentTrace trace;
    Vector x = x0;
    Tape tape;
    for (int k = 0; k <= iterations; ++k) {
        tape.clear();
        const Var leaf = tape.leaf(x.transpose());
        const Var v = objective(tape, leaf);
        const Vector grad = tape.backward(v)[leaf].transpose();
        if (!std::isfinite(v.item()) || !all_finite(grad)) {
            throw NonFiniteError("gradient_descent: non-finite value at iterate " + std::to_string(k));
        }
        trace.value.push_back(v.item());
        trace.grad_norm.push_back(grad.norm());
        if (k < iterations) {
            x -= step * grad;
        }
    }
    trace.final_point = x;
    return trace;
}

DescentDiagnostics descent_diagnostics(const std::vector<double>& value, const std::vector<double>& grad_norm,
                                       double step)
{
    if (value.empty()) {
        throw std::invalid_argument("descent_diagnostics: empty trace");
    }
    if (!(step > 0.0)) {
        throw std::invalid_argument("descent_diagnostics: step must be positive");
    }
    if (grad_norm.size() + 1 < value.size()) {
        throw std::invalid_argument("descent_diagnostics: gradient trace shorter than value trace minus one");
    }
    DescentDiagnostics d;
    for (std::size_t k = 0; k + 1 < value.size(); ++k) {
        if (value[k + 1] > value[k] + 1e-9 * (1.0 + std::abs(value[k]))) {
            d.monotone = false;
        }
    }
    const bool all_zero = std::all_of(value.begin(), value.end(), [](double v) { return v == 0.0; });
    double min_sq = std::numeric_limits<double>::infinity();
    for (std::size_t K = 1; K < value.size(); ++K) {
        min_sq = std::min(min_sq, grad_norm[K - 1] * grad_norm[K - 1]);
        if (!(value[K] > 0.0) && !(all_zero && K == 1)) {
            continue;
        }
        const double bound = 2.0 * (value[0] - value[K]) / (step * static_cast<double>(K));
        ++d.checked;
        d.min_grad_sq = min_sq;
        d.bound = bound;
        if (min_sq > bound + 1e-12 * (1.0 + std::abs(bound))) {
            d.sum_bound = false;
            if (d.first_failure < 0) {
                d.first_failure = static_cast<int>(K);
            }
        }
    }
    return d;
}

std::int64_t k_epsilon(double v0, double step, double eps)
{
    if (v0 < 0.0 || !(step > 0.0) || !(eps > 0.0)) {
        throw std::invalid_argument("k_epsilon: need V0 >= 0, step > 0, eps > 0");
    }
    if (v0 == 0.0) {
        return 0;
    }
    const double q = 2.0 * v0 / (step * eps);
    const double r = std::round(q);
    // Exact products like 2 * 2 / (0.01 * 0.1) land a few ulps off an integer.
    if (std::abs(q - r) <= 1e-9 * std::max(1.0, q)) {
        return static_cast<std::int64_t>(r);
    }
    return static_cast<std::int64_t>(std::ceil(q));
}

LipschitzEstimate theory_lipschitz(const CoefficientSet& coeffs, const Vector& xi, const MlpWeights& delta,
                                   const CorrectionConfig& correction, Index active_cap, double radius)
{
    const LipschitzEstimate partial = lipschitz_bound(correction, jacobian_norm_bound(delta));
    return combine_lipschitz(partial, constraint_bounds(coeffs, xi, radius), active_cap);
}

void write_trace_csv(std::ostream& out, const ProjectionReport& report)
{
    out << "iteration,V,V_smooth,grad_norm\n";
    const auto old = out.precision(17);
    for (std::size_t k = 0; k < report.violation.size(); ++k) {
        out << k << ',' << report.violation[k] << ',';
        if (k < report.smooth_violation.size()) out << report.smooth_violation[k];
        out << ',';
        if (k < report.grad_norm.size()) out << report.grad_norm[k];
        out << '\n';
    }
    out.precision(old);
}

} // namespace milo
