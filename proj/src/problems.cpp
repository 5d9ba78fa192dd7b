#include "milo/problems.hpp"

#include "milo/rng.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <stdexcept>

namespace milo {

std::string to_string(Family f)
{
    switch (f) {
    case Family::IQP: return "iqp";
    case Family::INP: return "inp";
    case Family::MIRB: return "mirb";
    case Family::Rosenbrock2D: return "rb2d";
    }
    return "unknown";
}

Family parse_family(std::string_view name)
{
    std::string lower(name);
    std::transform(lower.begin(), lower.end(), lower.begin(), [](unsigned char c) { return std::tolower(c); });
    if (lower == "iqp") return Family::IQP;
    if (lower == "inp") return Family::INP;
    if (lower == "mirb") return Family::MIRB;
    if (lower == "rb2d" || lower == "rosenbrock2d") return Family::Rosenbrock2D;
    throw std::invalid_argument("unknown problem family '" + std::string(name) + "'");
}

bool is_integral(const Vector& v)
{
    return std::all_of(v.data(), v.data() + v.size(), [](double z) { return std::isfinite(z) && z == std::nearbyint(z); });
}

MixedIntegerSolution::MixedIntegerSolution(Vector real, Vector integer)
    : real_(std::move(real)), integer_(std::move(integer))
{
    if (!is_integral(integer_)) {
        throw std::invalid_argument("MixedIntegerSolution: integer part has non-integral entries");
    }
}

MixedIntegerSolution MixedIntegerSolution::split(const Vector& x, Index n_real)
{
    if (n_real < 0 || n_real > x.size()) {
        throw ShapeError("MixedIntegerSolution::split: n_real " + std::to_string(n_real) + " out of range for length " +
                         std::to_string(x.size()));
    }
    return {x.head(n_real), x.tail(x.size() - n_real)};
}

Vector MixedIntegerSolution::stacked() const
{
    Vector x(real_.size() + integer_.size());
    x << real_, integer_;
    return x;
}

namespace {

Dimensions dimensions_for(Family family, Index n, Index m)
{
    switch (family) {
    case Family::IQP: return {0, n, m, m};
    case Family::INP: return {0, n, m, 2 * m};
    case Family::MIRB: return {n, n, 4, n + 1};
    case Family::Rosenbrock2D: return {1, 1, 4, 2};
    }
    throw std::invalid_argument("unknown family");
}

void check_batch(const CoefficientSet& c, const Matrix& params, Var x)
{
    if (x.cols() != c.dims.n_vars() || params.cols() != c.dims.n_param || params.rows() != x.rows()) {
        throw ShapeError(to_string(c.family) + ": expected x of width " + std::to_string(c.dims.n_vars()) +
                         " and params of width " + std::to_string(c.dims.n_param) + ", got " + shape_string(x.value()) +
                         " and " + shape_string(params));
    }
}

// Column c of `m` as a B x 1 constant.
Var column(Tape& tape, const Matrix& m, Index c) { return tape.constant(m.col(c)); }

} // namespace

CoefficientSet build_family(Family family, Index n, Index m, std::uint64_t seed)
{
    if (n < 1) {
        throw std::invalid_argument("build_family: n must be >= 1");
    }
    if ((family == Family::IQP || family == Family::INP) && m < 1) {
        throw std::invalid_argument("build_family: m must be >= 1");
    }
    if (family == Family::INP && n < 2) {
        throw std::invalid_argument("build_family: INP needs n >= 2 (d acts on two columns)");
    }
    CoefficientSet c;
    c.family = family;
    c.seed = seed;
    c.n = family == Family::Rosenbrock2D ? 1 : n;
    c.m = (family == Family::IQP || family == Family::INP) ? m : 4;
    c.dims = dimensions_for(family, c.n, c.m);

    switch (family) {
    case Family::IQP:
    case Family::INP: {
        Rng rng(derive_seed(seed, 1));
        c.Q = Matrix::Zero(n, n);
        for (Index i = 0; i < n; ++i) {
            c.Q(i, i) = rng.uniform(0.0, 0.01);
        }
        c.p = rng.uniform_matrix(n, 1, 0.0, 0.1);
        c.A = rng.normal_matrix(m, n, 0.0, 0.1);
        break;
    }
    case Family::MIRB: {
        Rng rng(derive_seed(seed, 2));
        c.p = rng.normal_matrix(n, 1, 0.0, 1.0);
        c.Q = rng.normal_matrix(n, 1, 0.0, 1.0);
        c.A.resize(0, 0);
        break;
    }
    case Family::Rosenbrock2D:
        c.Q.resize(0, 0);
        c.p.resize(0);
        c.A.resize(0, 0);
        break;
    }
    return c;
}

Matrix sample_instances(const CoefficientSet& c, Index count, std::uint64_t seed)
{
    if (count < 0) {
        throw std::invalid_argument("sample_instances: negative count");
    }
    Rng rng(seed);
    Matrix xi(count, c.dims.n_param);
    for (Index r = 0; r < count; ++r) {
        switch (c.family) {
        case Family::IQP:
            for (Index j = 0; j < c.m; ++j) xi(r, j) = rng.uniform(-1.0, 1.0);
            break;
        case Family::INP:
            for (Index j = 0; j < c.m; ++j) xi(r, j) = rng.uniform(-1.0, 1.0);
            for (Index j = 0; j < c.m; ++j) xi(r, c.m + j) = rng.uniform(-0.5, 0.5);
            break;
        case Family::MIRB:
            xi(r, 0) = rng.uniform(1.0, 8.0);
            for (Index j = 0; j < c.n; ++j) xi(r, 1 + j) = rng.uniform(0.5, 4.5);
            break;
        case Family::Rosenbrock2D:
            xi(r, 0) = rng.uniform(0.5, 4.5);
            xi(r, 1) = rng.uniform(1.0, 8.0);
            break;
        }
    }
    return xi;
}

Vector feature_vector(const CoefficientSet& c, const Vector& xi)
{
    if (xi.size() != c.dims.n_param) {
        throw ShapeError("feature_vector: expected " + std::to_string(c.dims.n_param) + " parameters, got " +
                         std::to_string(xi.size()));
    }
    // Instances are stored in network-input order already.
    return xi;
}

Var objective(Tape& tape, const CoefficientSet& c, const Matrix& params, Var x)
{
    check_batch(c, params, x);
    switch (c.family) {
    case Family::IQP:
    case Family::INP: {
        const Var half_q = tape.constant(0.5 * c.Q.diagonal());
        const Var p = tape.constant(c.p);
        const Var quad = matmul(square(x), half_q);
        const Var lin = c.family == Family::IQP ? matmul(x, p) : matmul(sine(x), p);
        return quad + lin;
    }
    case Family::MIRB: {
        const Var xr = slice_cols(x, 0, c.n);
        const Var y = slice_cols(x, c.n, c.n);
        const Var a = tape.constant(params.rightCols(c.n));
        return row_sum(square(a - xr)) + scale(row_sum(square(y - square(xr))), 50.0);
    }
    case Family::Rosenbrock2D: {
        const Var xr = slice_cols(x, 0, 1);
        const Var y = slice_cols(x, 1, 1);
        const Var a = column(tape, params, 0);
        return square(a - xr) + scale(square(y - square(xr)), 50.0);
    }
    }
    throw std::invalid_argument("objective: unknown family");
}

Var constraints(Tape& tape, const CoefficientSet& c, const Matrix& params, Var x)
{
    check_batch(c, params, x);
    switch (c.family) {
    case Family::IQP: {
        return matmul_nt(x, tape.constant(c.A)) - tape.constant(params);
    }
    case Family::INP: {
        const Var base = matmul_nt(x, tape.constant(c.A)) - tape.constant(params.leftCols(c.m));
        // d_i * (x_0 - x_1) added to every row i of A x.
        Matrix e01 = Matrix::Zero(c.n, 1);
        e01(0, 0) = 1.0;
        e01(1, 0) = -1.0;
        const Var diff = matmul(x, tape.constant(e01));
        const Var spread = matmul(diff, tape.constant(Matrix::Ones(1, c.m)));
        return base + mul(tape.constant(params.rightCols(c.m)), spread);
    }
    case Family::MIRB: {
        const double n = static_cast<double>(c.n);
        const Var xr = slice_cols(x, 0, c.n);
        const Var y = slice_cols(x, c.n, c.n);
        const Matrix b = params.col(0);
        const Var g_norm = row_sum(square(xr)) - tape.constant(n * b);
        const Var g_sum = tape.constant(0.5 * n * b) - row_sum(y);
        const Var g_p = matmul(xr, tape.constant(c.p));
        const Var g_q = matmul(y, tape.constant(c.Q));
        return concat_cols(concat_cols(g_norm, g_sum), concat_cols(g_p, g_q));
    }
    case Family::Rosenbrock2D: {
        const Var xr = slice_cols(x, 0, 1);
        const Var y = slice_cols(x, 1, 1);
        const Matrix b = params.col(1);
        const Var g_y = tape.constant(0.5 * b) - y;
        const Var g_sq = square(xr) - tape.constant(b);
        return concat_cols(concat_cols(g_y, g_sq), concat_cols(xr, -y));
    }
    }
    throw std::invalid_argument("constraints: unknown family");
}

double objective(const CoefficientSet& c, const Vector& xi, const Vector& x)
{
    Tape tape;
    return objective(tape, c, xi.transpose(), tape.constant(x.transpose())).item();
}

double objective(const CoefficientSet& c, const Vector& xi, const MixedIntegerSolution& sol)
{
    return objective(c, xi, sol.stacked());
}

Vector constraints(const CoefficientSet& c, const Vector& xi, const Vector& x)
{
    Tape tape;
    return constraints(tape, c, xi.transpose(), tape.constant(x.transpose())).value().transpose();
}

Vector constraints(const CoefficientSet& c, const Vector& xi, const MixedIntegerSolution& sol)
{
    return constraints(c, xi, sol.stacked());
}

double violation(const Vector& g) { return g.cwiseMax(0.0).sum(); }

double violation(const CoefficientSet& c, const Vector& xi, const MixedIntegerSolution& sol)
{
    return violation(constraints(c, xi, sol));
}

ConstraintBounds constraint_bounds(const CoefficientSet& c, const Vector& xi, double radius)
{
    if (xi.size() != c.dims.n_param) {
        throw ShapeError("constraint_bounds: parameter length mismatch");
    }
    auto spectral = [](const Matrix& m) {
        if (m.size() == 0) return 0.0;
        return Eigen::JacobiSVD<Matrix>(m).singularValues()(0);
    };
    switch (c.family) {
    case Family::IQP:
        return {spectral(c.A), 0.0};
    case Family::INP: {
        Matrix a = c.A;
        a.col(0) += xi.tail(c.m);
        a.col(1) -= xi.tail(c.m);
        return {spectral(a), 0.0};
    }
    case Family::MIRB: {
        const double n = static_cast<double>(c.n);
        const double frob = std::sqrt(4.0 * n * radius * radius + n + c.p.squaredNorm() + c.Q.squaredNorm());
        return {frob, 2.0};
    }
    case Family::Rosenbrock2D:
        return {std::sqrt(3.0 + 4.0 * radius * radius), 2.0};
    }
    return {};
}

} // namespace milo
