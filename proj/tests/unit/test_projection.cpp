#include "milo/projection.hpp"
#include "milo/training.hpp"

#include "../support/convex_suite.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

using namespace milo;

namespace {

CorrectionConfig method(CorrectionMethod m)
{
    CorrectionConfig c;
    c.method = m;
    c.noise = false;
    return c;
}

struct IqpSetup {
    CoefficientSet coeffs = build_family(Family::IQP, 6, 5, 3);
    MlpWeights delta = init_mlp(correction_net_spec(11, 16, 6), 4);
    Matrix xi = sample_instances(coeffs, 20, 5);
};

// delta whose integer logits are all `h` and real shifts zero.
MlpWeights constant_delta(const CoefficientSet& c, double h)
{
    MlpWeights w = init_mlp(correction_net_spec(c.dims.n_vars() + c.dims.n_param, 4, c.dims.n_vars()), 0);
    for (Matrix* p : w.parameters()) p->setZero();
    w.layers.back().bias.setConstant(h);
    return w;
}

// Relaxed point at least `margin` away from every integer in its integer slice.
Vector off_grid(Rng& rng, Index n, double lo, double hi, double margin)
{
    Vector x(n);
    for (Index i = 0; i < n; ++i) {
        do {
            x(i) = rng.uniform(lo, hi);
        } while (std::abs(x(i) - std::nearbyint(x(i))) < margin);
    }
    return x;
}

} // namespace

TEST(ProjectionConfig, Validation)
{
    ProjectionConfig c;
    EXPECT_NO_THROW(c.validate());
    c.step = 0.0;
    EXPECT_THROW(c.validate(), std::invalid_argument);
    c = {};
    c.max_iter = 0;
    EXPECT_THROW(c.validate(), std::invalid_argument);
}

TEST(ProjectionConfig, LipschitzCapsStep)
{
    ProjectionConfig c;
    c.lipschitz = 50.0;
    EXPECT_DOUBLE_EQ(c.effective_step(), 0.01);
    c.lipschitz = 400.0;
    EXPECT_DOUBLE_EQ(c.effective_step(), 1.0 / 400.0);
}

TEST(ProjectPath, UnitSlopeToy)
{
    const ConstraintPath path = [](Tape&, Var x) { return x; };
    const HardMap id = [](const Vector& x) { return MixedIntegerSolution::split(x, 1); };
    const ProjectionReport r = project_path(Vector::Ones(1), path, id, {});
    EXPECT_EQ(r.iterations, 100);
    EXPECT_EQ(r.termination, Termination::Feasible);
    ASSERT_EQ(r.violation.size(), 101u);
    ASSERT_EQ(r.grad_norm.size(), 100u);
    for (std::size_t k = 0; k + 1 < r.violation.size(); ++k) {
        EXPECT_NEAR(r.violation[k] - r.violation[k + 1], 0.01, 1e-12);
    }
    EXPECT_LE(r.violation.back(), 1e-6);
}

TEST(ProjectPath, MaxIterTermination)
{
    const ConstraintPath path = [](Tape&, Var x) { return x; };
    const HardMap id = [](const Vector& x) { return MixedIntegerSolution::split(x, 1); };
    ProjectionConfig c;
    c.max_iter = 10;
    const ProjectionReport r = project_path(Vector::Ones(1), path, id, c);
    EXPECT_EQ(r.termination, Termination::MaxIter);
    EXPECT_EQ(r.iterations, 10);
    EXPECT_EQ(r.violation.size(), 11u);
    EXPECT_EQ(r.grad_norm.size(), 10u);
    EXPECT_NEAR(r.relaxed(0), 0.9, 1e-12);
}

TEST(ProjectPath, NonFiniteGradientNamesIterate)
{
    const ConstraintPath path = [](Tape& t, Var x) {
        return mul(x, t.constant(Matrix::Constant(1, 1, std::numeric_limits<double>::infinity())));
    };
    const HardMap id = [](const Vector& x) { return MixedIntegerSolution::split(x, 1); };
    try {
        project_path(Vector::Ones(1), path, id, {});
        FAIL() << "expected NonFiniteError";
    } catch (const NonFiniteError& e) {
        EXPECT_NE(std::string(e.what()).find("iterate 0"), std::string::npos) << e.what();
    }
}

TEST(Project, FeasibleStartIsUnchanged)
{
    IqpSetup s;
    const Vector xi = Vector::Constant(5, 100.0);
    for (CorrectionMethod m : {CorrectionMethod::RC, CorrectionMethod::LT}) {
        const Vector x0 = Rng(1).uniform_matrix(6, 1, -2.0, 2.0);
        const ProjectionReport r = project(x0, xi, s.coeffs, s.delta, method(m), {});
        EXPECT_EQ(r.iterations, 0);
        EXPECT_EQ(r.termination, Termination::Feasible);
        EXPECT_EQ(r.relaxed, x0);
        EXPECT_EQ(r.solution, correct(x0, xi, s.coeffs.dims, s.delta, method(m)));
    }
}

TEST(Project, FeasibleTerminationRecomputesFeasible)
{
    IqpSetup s;
    int feasible = 0;
    Rng rng(6);
    ProjectionConfig config;
    config.step = 0.5;
    for (Index i = 0; i < s.xi.rows(); ++i) {
        const Vector xi = s.xi.row(i).transpose();
        const Vector x0 = rng.uniform_matrix(6, 1, -3.0, 3.0);
        for (CorrectionMethod m : {CorrectionMethod::RC, CorrectionMethod::LT, CorrectionMethod::RS}) {
            const ProjectionReport r = project(x0, xi, s.coeffs, s.delta, method(m), config);
            EXPECT_EQ(r.violation.size(), static_cast<std::size_t>(r.iterations) + 1);
            if (r.termination == Termination::Feasible) {
                ++feasible;
                EXPECT_LE(violation(s.coeffs, xi, r.solution), 1e-6);
                EXPECT_NEAR(violation(s.coeffs, xi, r.solution), r.violation.back(), 1e-12);
            }
        }
    }
    EXPECT_GT(feasible, 0);
}

TEST(Project, Deterministic)
{
    IqpSetup s;
    const Vector xi = s.xi.row(0).transpose();
    const Vector x0 = Vector::Constant(6, 5.3);
    CorrectionConfig rc = method(CorrectionMethod::RC);
    rc.noise = true; // forced off inside projection
    const ProjectionReport a = project(x0, xi, s.coeffs, s.delta, rc, {});
    const ProjectionReport b = project(x0, xi, s.coeffs, s.delta, rc, {});
    EXPECT_EQ(a.violation, b.violation);
    EXPECT_EQ(a.grad_norm, b.grad_norm);
    EXPECT_EQ(a.relaxed, b.relaxed);
    EXPECT_EQ(a.solution, b.solution);
}

TEST(SmoothViolation, MatchesHardAtSaturation)
{
    const CoefficientSet c = build_family(Family::IQP, 4, 3, 1);
    Rng rng(2);
    for (double h : {-40.0, 40.0}) {
        const MlpWeights delta = constant_delta(c, h);
        for (int trial = 0; trial < 10; ++trial) {
            const Vector x = off_grid(rng, 4, -5.0, 5.0, 0.05);
            const Vector xi = rng.uniform_matrix(3, 1, -1.0, 1.0);
            const SmoothValue sv = smooth_violation(x, xi, c, delta, method(CorrectionMethod::RC));
            const double hard = violation(c, xi, correct(x, xi, c.dims, delta, method(CorrectionMethod::RC)));
            EXPECT_NEAR(sv.value, hard, 1e-12);
        }
    }
}

TEST(SmoothViolation, ZeroInsideFeasibleRegion)
{
    IqpSetup s;
    const SmoothValue sv = smooth_violation(Vector::Constant(6, 0.3), Vector::Constant(5, 50.0), s.coeffs, s.delta,
                                            method(CorrectionMethod::LT));
    EXPECT_EQ(sv.value, 0.0);
    EXPECT_TRUE(sv.gradient.isZero(0.0));
}

TEST(SmoothViolation, GradientMatchesFiniteDifferences)
{
    IqpSetup s;
    Rng rng(8);
    for (CorrectionMethod m : {CorrectionMethod::RC, CorrectionMethod::LT}) {
        for (int trial = 0; trial < 10; ++trial) {
            const Vector x = off_grid(rng, 6, -6.0, 6.0, 1e-3);
            const Vector xi = s.xi.row(trial).transpose();
            const SmoothValue sv = smooth_violation(x, xi, s.coeffs, s.delta, method(m));
            if (sv.value == 0.0) continue;
            const double h = 1e-6;
            Vector fd(6);
            for (Index i = 0; i < 6; ++i) {
                Vector up = x, down = x;
                up(i) += h;
                down(i) -= h;
                fd(i) = (smooth_violation(up, xi, s.coeffs, s.delta, method(m)).value -
                         smooth_violation(down, xi, s.coeffs, s.delta, method(m)).value) /
                        (2.0 * h);
            }
            EXPECT_LE((sv.gradient - fd).cwiseAbs().maxCoeff() / (fd.cwiseAbs().maxCoeff() + 1e-12), 1e-5)
                << to_string(m) << " trial " << trial;
        }
    }
}

TEST(Diagnostics, QuadraticViolationAtInverseLipschitzStep)
{
    // V = max(0, x^2 - 1) from x = 2; the gradient of x^2 - 1 is 2-Lipschitz.
    const GraphFn v = [](Tape& t, Var x) { return positive_part_l1(square(x) - t.scalar_constant(1.0)); };
    const DescentTrace trace = gradient_descent(v, Vector::Constant(1, 2.0), 0.5, 20);
    const DescentDiagnostics d = descent_diagnostics(trace.value, trace.grad_norm, 0.5);
    EXPECT_TRUE(d.monotone);
    EXPECT_TRUE(d.sum_bound);
}

TEST(Diagnostics, QuadraticViolationSmallStepChecksManyK)
{
    const GraphFn v = [](Tape& t, Var x) { return positive_part_l1(square(x) - t.scalar_constant(1.0)); };
    const DescentTrace trace = gradient_descent(v, Vector::Constant(1, 2.0), 0.05, 200);
    const DescentDiagnostics d = descent_diagnostics(trace.value, trace.grad_norm, 0.05);
    EXPECT_TRUE(d.monotone);
    EXPECT_TRUE(d.sum_bound);
    EXPECT_GT(d.checked, 5);
    // Closed form: x_{k+1} = (1 - 2 eta) x_k while |x_k| > 1.
    EXPECT_NEAR(trace.value[1], std::pow(2.0 * 0.9, 2) - 1.0, 1e-14);
}

TEST(Diagnostics, SingleStepSpecialisation)
{
    const double eta = 0.1;
    const DescentDiagnostics ok = descent_diagnostics({3.0, 2.0}, {4.0}, eta);
    EXPECT_EQ(ok.checked, 1);
    EXPECT_DOUBLE_EQ(ok.min_grad_sq, 16.0);
    EXPECT_DOUBLE_EQ(ok.bound, 2.0 / eta * (3.0 - 2.0));
    EXPECT_TRUE(ok.sum_bound);
    const DescentDiagnostics bad = descent_diagnostics({3.0, 2.9}, {4.0}, eta);
    EXPECT_FALSE(bad.sum_bound);
    EXPECT_EQ(bad.first_failure, 1);
}

TEST(Diagnostics, ZeroTrace)
{
    const DescentDiagnostics d = descent_diagnostics({0.0, 0.0, 0.0}, {0.0, 0.0}, 0.1);
    EXPECT_TRUE(d.monotone);
    EXPECT_TRUE(d.sum_bound);
    EXPECT_EQ(d.checked, 1);
    EXPECT_EQ(d.min_grad_sq, 0.0);
    EXPECT_EQ(d.bound, 0.0);
}

TEST(Diagnostics, DetectsIncrease)
{
    EXPECT_FALSE(descent_diagnostics({1.0, 1.1}, {1.0}, 0.1).monotone);
}

TEST(IterationBound, Examples)
{
    EXPECT_EQ(k_epsilon(2.0, 0.01, 0.1), 4000);
    EXPECT_EQ(k_epsilon(0.0, 0.01, 0.1), 0);
    EXPECT_EQ(k_epsilon(1.0, 0.3, 0.7), 10);
    EXPECT_THROW(k_epsilon(1.0, 0.0, 0.1), std::invalid_argument);
}

TEST(IterationBound, ConvexSuiteEntersWithinBound)
{
    const auto suite = milo::testing::convex_suite(77, 5);
    for (const auto& p : suite) {
        const double eta = 1.0 / p.lipschitz;
        const DescentTrace trace = gradient_descent(p.violation(), p.start, eta, 1000);
        const DescentDiagnostics d = descent_diagnostics(trace.value, trace.grad_norm, eta);
        EXPECT_TRUE(d.monotone);
        EXPECT_TRUE(d.sum_bound);
        for (double eps : {1e-1, 1e-2}) {
            const std::int64_t bound = k_epsilon(trace.value[0], eta, eps);
            const int entry = milo::testing::first_entry(trace.value, eps);
            if (entry >= 0) {
                EXPECT_LE(entry, bound);
            } else {
                EXPECT_GT(bound, 1000);
            }
        }
    }
}

TEST(TheoryLipschitz, LinearConstraintsHaveNoCurvatureTerm)
{
    IqpSetup s;
    const Vector xi = s.xi.row(0).transpose();
    const LipschitzEstimate e = theory_lipschitz(s.coeffs, xi, s.delta, method(CorrectionMethod::RC), 3, 10.0);
    EXPECT_EQ(e.constraint_lipschitz, 0.0);
    EXPECT_NEAR(e.constraint_jacobian, spectral_norm(s.coeffs.A), 1e-6);
    EXPECT_NEAR(e.combined, 3.0 * e.constraint_jacobian * e.correction_lipschitz, 1e-12);
    EXPECT_GT(e.combined, 0.0);
}

TEST(TraceCsv, HeaderAndRows)
{
    const ConstraintPath path = [](Tape&, Var x) { return x; };
    const HardMap id = [](const Vector& x) { return MixedIntegerSolution::split(x, 1); };
    ProjectionConfig c;
    c.record_smooth = true;
    const ProjectionReport r = project_path(Vector::Constant(1, 0.02), path, id, c, path);
    std::ostringstream out;
    write_trace_csv(out, r);
    std::istringstream in(out.str());
    std::string line;
    std::getline(in, line);
    EXPECT_EQ(line, "iteration,V,V_smooth,grad_norm");
    int rows = 0;
    while (std::getline(in, line)) ++rows;
    EXPECT_EQ(rows, r.iterations + 1);
}

TEST(Project, RosenbrockInstanceReachesFeasibility)
{
    // Briefly trained RC model; the instance starts infeasible before projection.
    const CoefficientSet c = build_family(Family::Rosenbrock2D, 1, 0, 0);
    const Dataset data = make_dataset(c, 800, 100, 10, 1);
    TrainingConfig cfg;
    cfg.epochs = 30;
    cfg.seed = 1;
    const ModelWeights init = init_model(c, method(CorrectionMethod::RC), 1);
    const TrainingResult trained = train(c, data, init, cfg);
    Vector xi(2);
    xi << 4.16, 2.19;
    // Start from an untrained relaxed output far from feasibility.
    const Vector x0 = relaxed_solutions(init, xi.transpose()).row(0).transpose() + Vector::Constant(2, 3.0);
    const ProjectionReport r =
        project(x0, xi, c, trained.weights.correction_net, trained.weights.correction, ProjectionConfig{});
    EXPECT_GT(r.violation.front(), 0.0);
    EXPECT_EQ(r.termination, Termination::Feasible);
    EXPECT_LE(r.iterations, 1000);
}
