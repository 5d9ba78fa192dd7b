#include "milo/baselines.hpp"

#include "milo/correction.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

namespace milo {

void RelaxationConfig::validate() const
{
    if (!(mu0 > 0.0)) throw std::invalid_argument("RelaxationConfig: mu0 must be positive");
    if (!(growth > 1.0)) throw std::invalid_argument("RelaxationConfig: growth must exceed 1");
    if (rounds < 1) throw std::invalid_argument("RelaxationConfig: rounds must be >= 1");
    if (inner_steps < 1) throw std::invalid_argument("RelaxationConfig: inner steps must be >= 1");
    if (!(lr > 0.0)) throw std::invalid_argument("RelaxationConfig: lr must be positive");
    if (!(tol > 0.0)) throw std::invalid_argument("RelaxationConfig: tol must be positive");
}

void OracleConfig::validate() const
{
    if (window < 1) throw std::invalid_argument("OracleConfig: window must be >= 1");
    if (!(cap >= 1.0)) throw std::invalid_argument("OracleConfig: cap must be >= 1");
    relaxation.validate();
}

namespace {

// Builds (objective, constraints) for a 1 x k leaf.
using PairGraph = std::function<std::pair<Var, Var>(Tape&, Var)>;

struct PenaltyEval {
    double value = 0.0;
    double objective = 0.0;
    double violation = 0.0;
    Vector gradient;
};

// Positive part with its kink rounded over [0, width]; never above max(0, g).
double huber_plus(double g, double width)
{
    if (g <= 0.0) return 0.0;
    if (g >= width) return g - 0.5 * width;
    return 0.5 * g * g / width;
}

double huber_plus_slope(double g, double width)
{
    if (g <= 0.0) return 0.0;
    return g >= width ? 1.0 : g / width;
}

// f + mu sum huber_plus(g_j, width); width = 0 gives the exact L1 penalty.
PenaltyEval penalty_eval(Tape& tape, const PairGraph& graph, const Vector& x, double mu, double width,
                         bool want_grad)
{
    tape.clear();
    const Var leaf = tape.leaf(x.transpose());
    const auto [f, g] = graph(tape, leaf);
    const Matrix& gv = g.value();
    PenaltyEval e;
    e.objective = f.item();
    e.violation = gv.cwiseMax(0.0).sum();
    Matrix slope(gv.rows(), gv.cols());
    double pen = 0.0;
    for (Index j = 0; j < gv.size(); ++j) {
        pen += width > 0.0 ? huber_plus(gv(j), width) : std::max(0.0, gv(j));
        slope(j) = width > 0.0 ? huber_plus_slope(gv(j), width) : (gv(j) > 0.0 ? 1.0 : 0.0);
    }
    e.value = e.objective + mu * pen;
    if (!std::isfinite(e.value)) {
        throw NonFiniteError("solve_relaxation: non-finite penalty value");
    }
    if (want_grad) {
        // The slope is frozen at x, so this linearization has the right gradient.
        const Var lin = f + scale(sum(mul(g, tape.constant(std::move(slope)))), mu);
        e.gradient = tape.backward(lin)[leaf].transpose();
    }
    return e;
}

// L-BFGS (two-loop recursion, memory 8) with Armijo backtracking.
Vector descend(Tape& tape, const PairGraph& graph, Vector x, double mu, double width, const RelaxationConfig& c)
{
    constexpr std::size_t memory = 8;
    std::vector<Vector> s_hist;
    std::vector<Vector> y_hist;
    PenaltyEval cur = penalty_eval(tape, graph, x, mu, width, true);
    for (int it = 0; it < c.inner_steps; ++it) {
        const double gnorm = cur.gradient.norm();
        if (gnorm <= 1e-12 * (1.0 + std::abs(cur.value))) {
            break;
        }
        Vector dir = -cur.gradient;
        if (!s_hist.empty()) {
            const std::size_t k = s_hist.size();
            std::vector<double> alpha(k);
            for (std::size_t i = k; i-- > 0;) {
                alpha[i] = s_hist[i].dot(dir) / y_hist[i].dot(s_hist[i]);
                dir -= alpha[i] * y_hist[i];
            }
            dir *= s_hist.back().dot(y_hist.back()) / y_hist.back().squaredNorm();
            for (std::size_t i = 0; i < k; ++i) {
                const double beta = y_hist[i].dot(dir) / y_hist[i].dot(s_hist[i]);
                dir += (alpha[i] - beta) * s_hist[i];
            }
        }
        double slope = cur.gradient.dot(dir);
        if (!(slope < 0.0)) {
            s_hist.clear();
            y_hist.clear();
            dir = -cur.gradient;
            slope = -gnorm * gnorm;
        }
        double t = s_hist.empty() ? std::min(1.0, c.lr / std::max(gnorm, 1e-300) * 100.0) : 1.0;
        bool accepted = false;
        PenaltyEval next;
        Vector trial;
        for (int back = 0; back < 60; ++back) {
            trial = x + t * dir;
            next = penalty_eval(tape, graph, trial, mu, width, true);
            if (next.value <= cur.value + 1e-4 * t * slope) {
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if (!accepted) {
            break;
        }
        const double drop = cur.value - next.value;
        Vector s = trial - x;
        Vector y = next.gradient - cur.gradient;
        if (s.dot(y) > 1e-12 * s.norm() * y.norm()) {
            s_hist.push_back(std::move(s));
            y_hist.push_back(std::move(y));
            if (s_hist.size() > memory) {
                s_hist.erase(s_hist.begin());
                y_hist.erase(y_hist.begin());
            }
        }
        x = std::move(trial);
        cur = std::move(next);
        if (drop <= 1e-16 * (1.0 + std::abs(cur.value))) {
            break;
        }
    }
    return x;
}

RelaxationResult run_schedule(const PairGraph& graph, Vector x, const RelaxationConfig& c)
{
    c.validate();
    Tape tape;
    RelaxationResult r;
    double mu = c.mu0;
    double width = 0.1;
    for (int round = 0; round < c.rounds; ++round) {
        x = descend(tape, graph, std::move(x), mu, width, c);
        r.rounds_used = round + 1;
        mu *= c.growth;
        width /= c.growth;
    }
    const PenaltyEval end = penalty_eval(tape, graph, x, 0.0, 0.0, false);
    r.x = std::move(x);
    r.objective = end.objective;
    r.violation = end.violation;
    r.success = end.violation <= c.tol;
    return r;
}

} // namespace

RelaxationResult solve_relaxation(const CoefficientSet& coeffs, const Vector& xi, const RelaxationConfig& config,
                                  const std::optional<Vector>& x0)
{
    const Index n = coeffs.dims.n_vars();
    Vector start = x0.value_or(Vector::Zero(n));
    if (start.size() != n) {
        throw ShapeError("solve_relaxation: start has length " + std::to_string(start.size()) + ", expected " +
                         std::to_string(n));
    }
    const Matrix params = xi.transpose();
    const PairGraph graph = [&](Tape& tape, Var x) {
        return std::pair{objective(tape, coeffs, params, x), constraints(tape, coeffs, params, x)};
    };
    return run_schedule(graph, std::move(start), config);
}

RelaxationResult solve_restricted(const CoefficientSet& coeffs, const Vector& xi, const Vector& x_int,
                                  const Vector& real0, const RelaxationConfig& config)
{
    const Dimensions& d = coeffs.dims;
    if (x_int.size() != d.n_int || real0.size() != d.n_real) {
        throw ShapeError("solve_restricted: slice lengths do not match the family dimensions");
    }
    const Matrix params = xi.transpose();
    const Matrix fixed = x_int.transpose();
    if (d.n_real == 0) {
        Vector x = x_int;
        RelaxationResult r;
        r.objective = objective(coeffs, xi, x);
        r.violation = violation(constraints(coeffs, xi, x));
        r.success = r.violation <= config.tol;
        r.x = Vector(0);
        return r;
    }
    const PairGraph graph = [&](Tape& tape, Var xr) {
        const Var x = concat_cols(xr, tape.constant(fixed));
        return std::pair{objective(tape, coeffs, params, x), constraints(tape, coeffs, params, x)};
    };
    return run_schedule(graph, real0, config);
}

MixedIntegerSolution rr_baseline(const CoefficientSet& coeffs, const Vector& xi, const RelaxationConfig& config)
{
    return rs_round(solve_relaxation(coeffs, xi, config).x, coeffs.dims.n_real);
}

std::optional<OracleResult> brute_force_oracle(const CoefficientSet& coeffs, const Vector& xi, const Vector& center,
                                               const OracleConfig& config)
{
    config.validate();
    const Dimensions& d = coeffs.dims;
    if (center.size() != d.n_vars()) {
        throw ShapeError("brute_force_oracle: center has length " + std::to_string(center.size()) + ", expected " +
                         std::to_string(d.n_vars()));
    }
    const double span = static_cast<double>(2 * config.window + 1);
    const double size = std::pow(span, static_cast<double>(d.n_int));
    if (size > config.cap) {
        throw EnumerationCapError("enumeration cap exceeded: window needs " + std::to_string(size) +
                                  " assignments, cap is " + std::to_string(config.cap));
    }
    const MixedIntegerSolution rounded = rs_round(center, d.n_real);
    const Vector base = rounded.integer().array() - static_cast<double>(config.window);
    const Vector real_center = center.head(d.n_real);

    std::vector<Vector> starts{real_center};
    if (d.n_real > 0 && !real_center.isZero(0.0)) {
        starts.push_back(Vector::Zero(d.n_real));
    }

    std::optional<OracleResult> best;
    std::vector<Index> digit(static_cast<std::size_t>(d.n_int), 0);
    const Index top = 2 * config.window;
    for (;;) {
        Vector z = base;
        for (Index j = 0; j < d.n_int; ++j) z(j) += static_cast<double>(digit[static_cast<std::size_t>(j)]);

        for (const Vector& s : starts) {
            const RelaxationResult r = solve_restricted(coeffs, xi, z, s, config.relaxation);
            if (r.violation > config.tol) {
                continue;
            }
            // Strict improvement keeps the earliest, i.e. lexicographically smallest, assignment.
            if (!best || r.objective < best->objective) {
                best = OracleResult{MixedIntegerSolution(r.x, z), r.objective};
            }
        }

        Index j = d.n_int - 1;
        while (j >= 0 && digit[static_cast<std::size_t>(j)] == top) {
            digit[static_cast<std::size_t>(j)] = 0;
            --j;
        }
        if (j < 0) {
            break;
        }
        ++digit[static_cast<std::size_t>(j)];
    }
    return best;
}

} // namespace milo
