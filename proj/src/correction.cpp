#include "milo/correction.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <stdexcept>

namespace milo {

std::string to_string(CorrectionMethod m)
{
    switch (m) {
    case CorrectionMethod::RC: return "rc";
    case CorrectionMethod::LT: return "lt";
    case CorrectionMethod::RS: return "rs";
    case CorrectionMethod::RL: return "rl";
    }
    return "unknown";
}

CorrectionMethod parse_method(std::string_view name)
{
    std::string lower(name);
    std::transform(lower.begin(), lower.end(), lower.begin(), [](unsigned char c) { return std::tolower(c); });
    if (lower == "rc") return CorrectionMethod::RC;
    if (lower == "lt") return CorrectionMethod::LT;
    if (lower == "rs") return CorrectionMethod::RS;
    if (lower == "rl") return CorrectionMethod::RL;
    throw std::invalid_argument("unknown correction method '" + std::string(name) + "'");
}

void CorrectionConfig::validate() const
{
    if (!(temperature > 0.0)) {
        throw std::invalid_argument("CorrectionConfig: temperature must be positive");
    }
    if (!(slope > 0.0)) {
        throw std::invalid_argument("CorrectionConfig: slope must be positive");
    }
}

Var gumbel_sigmoid(Var h, const Matrix& noise1, const Matrix& noise2, double temperature)
{
    if (noise1.rows() != h.rows() || noise1.cols() != h.cols() || noise2.rows() != h.rows() ||
        noise2.cols() != h.cols()) {
        throw ShapeError("gumbel_sigmoid: noise " + shape_string(noise1) + " does not match logits " +
                         shape_string(h.value()));
    }
    Var z = h;
    if (!noise1.isZero(0.0) || !noise2.isZero(0.0)) {
        z = h + h.tape->constant(noise1 - noise2);
    }
    return sigmoid(scale(z, 1.0 / temperature));
}

CorrectionNodes apply_correction(Tape& tape, const Dimensions& dims, const MlpWeights& delta,
                                 const MlpBinding& delta_binding, Var xbar, Var xi, const CorrectionConfig& config,
                                 ForwardMode mode, Rng* rng, std::vector<BatchStats>* stats, bool smooth)
{
    config.validate();
    if (xbar.cols() != dims.n_vars()) {
        throw ShapeError("apply_correction: expected relaxed solution of width " + std::to_string(dims.n_vars()) +
                         ", got " + shape_string(xbar.value()));
    }
    const Var xr = slice_cols(xbar, 0, dims.n_real);
    const Var xz = slice_cols(xbar, dims.n_real, dims.n_int);
    // The smooth variant differentiates floor exactly, so its gradient is the
    // true gradient of a function that is C^1 between integer jumps.
    const Var down = attach_surrogate(xz, smooth ? floor_exact_rule() : floor_identity_rule());

    if (!uses_correction_net(config.method)) {
        const Var frac = xz - down;
        const Var dir = attach_surrogate(frac, indicator_identity_rule(0.5));
        const Var rounded = smooth ? xz : attach_surrogate(xz, round_identity_rule());
        return {concat_cols(xr, rounded), frac, dir};
    }

    if (xi.rows() != xbar.rows()) {
        throw ShapeError("apply_correction: parameter batch " + shape_string(xi.value()) +
                         " does not match relaxed batch " + shape_string(xbar.value()));
    }
    const Var h = forward(tape, delta, delta_binding, concat_cols(xbar, xi), mode, rng, stats);
    if (h.cols() != dims.n_vars()) {
        throw ShapeError("apply_correction: correction net outputs " + shape_string(h.value()) + ", expected width " +
                         std::to_string(dims.n_vars()));
    }
    const Var hr = slice_cols(h, 0, dims.n_real);
    const Var hz = slice_cols(h, dims.n_real, dims.n_int);

    Var soft;
    if (config.method == CorrectionMethod::RC) {
        Matrix e1 = Matrix::Zero(hz.rows(), hz.cols());
        Matrix e2 = e1;
        if (config.noise && rng != nullptr) {
            e1 = rng->gumbel_matrix(hz.rows(), hz.cols());
            e2 = rng->gumbel_matrix(hz.rows(), hz.cols());
        }
        soft = gumbel_sigmoid(hz, e1, e2, config.temperature);
    } else {
        const Var threshold = sigmoid(hz);
        const Var logits = (xz - down) - threshold;
        soft = sigmoid(scale(logits, config.slope));
    }
    const Var dir = attach_surrogate(soft, indicator_identity_rule(0.5));
    const Var xz_hat = down + (smooth ? soft : dir);
    return {concat_cols(xr + hr, xz_hat), soft, dir};
}

namespace {

CorrectionOutput run_single(const Vector& xbar, const Vector& xi, const Dimensions& dims, const MlpWeights& delta,
                            const CorrectionConfig& config, Rng* rng)
{
    Tape tape;
    MlpBinding binding;
    if (uses_correction_net(config.method)) {
        binding = bind(tape, delta, false);
    }
    const Var x = tape.constant(xbar.transpose());
    const Var p = tape.constant(xi.transpose());
    const CorrectionNodes out = apply_correction(tape, dims, delta, binding, x, p, config, ForwardMode::Eval, rng);
    const Vector sol = out.solution.value().row(0).transpose();
    return {MixedIntegerSolution::split(sol, dims.n_real), out.soft.value().row(0).transpose(),
            out.directions.value().row(0).transpose()};
}

void expect_method(const CorrectionConfig& config, CorrectionMethod want, const char* who)
{
    if (config.method != want) {
        throw std::invalid_argument(std::string(who) + ": config method is " + to_string(config.method));
    }
}

} // namespace

CorrectionOutput rc_correct(const Vector& xbar, const Vector& xi, const Dimensions& dims, const MlpWeights& delta,
                            const CorrectionConfig& config, std::uint64_t noise_seed)
{
    expect_method(config, CorrectionMethod::RC, "rc_correct");
    Rng rng(noise_seed);
    return run_single(xbar, xi, dims, delta, config, config.noise ? &rng : nullptr);
}

CorrectionOutput lt_correct(const Vector& xbar, const Vector& xi, const Dimensions& dims, const MlpWeights& delta,
                            const CorrectionConfig& config)
{
    expect_method(config, CorrectionMethod::LT, "lt_correct");
    return run_single(xbar, xi, dims, delta, config, nullptr);
}

MixedIntegerSolution rs_round(const Vector& xbar, Index n_real)
{
    Vector x = xbar;
    for (Index i = n_real; i < x.size(); ++i) {
        const double f = std::floor(x(i));
        x(i) = f + ((x(i) - f) > 0.5 ? 1.0 : 0.0);
    }
    return MixedIntegerSolution::split(x, n_real);
}

MixedIntegerSolution correct(const Vector& xbar, const Vector& xi, const Dimensions& dims, const MlpWeights& delta,
                             const CorrectionConfig& config)
{
    if (!uses_correction_net(config.method)) {
        return rs_round(xbar, dims.n_real);
    }
    return run_single(xbar, xi, dims, delta, config, nullptr).solution;
}

double gumbel_curvature_bound(double temperature)
{
    return 1.0 / (6.0 * std::sqrt(3.0) * temperature * temperature);
}

LipschitzEstimate lipschitz_bound(const CorrectionConfig& config, double network_norm)
{
    config.validate();
    if (network_norm < 0.0) {
        throw std::invalid_argument("lipschitz_bound: network norm must be nonnegative");
    }
    LipschitzEstimate e;
    e.network_norm = network_norm;
    double max_slope = 0.0; // largest |d b / d h| under the surrogate
    switch (config.method) {
    case CorrectionMethod::RC:
        e.surrogate_bound = gumbel_curvature_bound(config.temperature);
        max_slope = 0.25 / config.temperature;
        break;
    case CorrectionMethod::LT:
        e.surrogate_bound = config.slope / 4.0;
        max_slope = config.slope / 16.0; // beta v(1-v) times the threshold sigmoid's 1/4
        break;
    default:
        throw std::invalid_argument("lipschitz_bound: method " + to_string(config.method) +
                                    " has no learnable surrogate");
    }
    e.correction_lipschitz = e.surrogate_bound * network_norm;
    e.correction_jacobian = 1.0 + std::max(1.0, max_slope) * network_norm;
    return e;
}

LipschitzEstimate combine_lipschitz(LipschitzEstimate e, const ConstraintBounds& bounds, Index active_cap)
{
    if (active_cap < 0 || bounds.jacobian_norm < 0.0 || bounds.jacobian_lipschitz < 0.0) {
        throw std::invalid_argument("combine_lipschitz: factors must be nonnegative");
    }
    e.constraint_jacobian = bounds.jacobian_norm;
    e.constraint_lipschitz = bounds.jacobian_lipschitz;
    e.active_cap = active_cap;
    e.combined = static_cast<double>(active_cap) *
                 (e.constraint_jacobian * e.correction_lipschitz + e.correction_jacobian * e.constraint_lipschitz);
    return e;
}

} // namespace milo
