#include "milo/training.hpp"

#include <gtest/gtest.h>

#include <algorithm>

using namespace milo;

namespace {

// One integer variable, two constraints: f = 2x, g = -b (A = 0).
CoefficientSet hand_iqp()
{
    CoefficientSet c = build_family(Family::IQP, 1, 2, 0);
    c.Q.setZero();
    c.p = Vector::Constant(1, 2.0);
    c.A.setZero();
    return c;
}

CorrectionConfig method(CorrectionMethod m)
{
    CorrectionConfig c;
    c.method = m;
    return c;
}

TrainingConfig quick(int epochs, std::uint64_t seed = 3)
{
    TrainingConfig t;
    t.epochs = epochs;
    t.seed = seed;
    t.batch = 32;
    return t;
}

struct SmallIqp {
    CoefficientSet coeffs = build_family(Family::IQP, 4, 3, 2);
    Dataset data = make_dataset(coeffs, 256, 64, 16, 5);
};

} // namespace

TEST(PenaltyLoss, FeasibleInstance)
{
    const CoefficientSet c = hand_iqp();
    Matrix xi(1, 2);
    xi << 1.0, 3.0;
    const LossBreakdown l = penalty_loss(c, xi, Matrix::Ones(1, 1), 100.0);
    EXPECT_DOUBLE_EQ(l.total, 2.0);
    EXPECT_DOUBLE_EQ(l.objective, 2.0);
    EXPECT_EQ(l.penalty, 0.0);
}

TEST(PenaltyLoss, ViolatedInstance)
{
    const CoefficientSet c = hand_iqp();
    Matrix xi(1, 2);
    xi << -0.5, 1.0;
    const LossBreakdown l = penalty_loss(c, xi, Matrix::Ones(1, 1), 100.0);
    EXPECT_DOUBLE_EQ(l.total, 52.0);
    EXPECT_DOUBLE_EQ(l.penalty, 0.5);
}

TEST(PenaltyLoss, RandomBatchMatchesPlainEigen)
{
    const CoefficientSet c = build_family(Family::IQP, 5, 4, 1);
    const Matrix xi = sample_instances(c, 2, 9);
    const Matrix x = Rng(3).uniform_matrix(2, 5, -4.0, 4.0).array().round().matrix();
    double f = 0.0, v = 0.0;
    for (Index r = 0; r < 2; ++r) {
        const Vector xr = x.row(r).transpose();
        f += 0.5 * xr.dot(c.Q * xr) + c.p.dot(xr);
        v += (c.A * xr - xi.row(r).transpose()).cwiseMax(0.0).sum();
    }
    const LossBreakdown l = penalty_loss(c, xi, x, 7.0);
    EXPECT_NEAR(l.objective, f / 2.0, 1e-13);
    EXPECT_NEAR(l.penalty, v / 2.0, 1e-13);
    EXPECT_NEAR(l.total, f / 2.0 + 7.0 * v / 2.0, 1e-12);
}

TEST(PenaltyLoss, PenaltyIsMeanViolationAndBoundsObjective)
{
    Rng rng(4);
    for (Family f : {Family::IQP, Family::INP, Family::MIRB, Family::Rosenbrock2D}) {
        const CoefficientSet c = build_family(f, 3, 3, 1);
        for (int trial = 0; trial < 20; ++trial) {
            const Matrix xi = sample_instances(c, 6, rng.next_u64());
            const Matrix x = rng.uniform_matrix(6, c.dims.n_vars(), -3.0, 3.0);
            const LossBreakdown l = penalty_loss(c, xi, x, 10.0);
            double mean_v = 0.0;
            for (Index r = 0; r < 6; ++r) {
                mean_v += violation(constraints(c, xi.row(r).transpose(), Vector(x.row(r).transpose())));
            }
            mean_v /= 6.0;
            EXPECT_NEAR(l.penalty, mean_v, 1e-12);
            EXPECT_GE(l.total, l.objective);
            EXPECT_EQ(l.total == l.objective, mean_v == 0.0);
        }
    }
}

TEST(PenaltyLoss, ZeroLambdaGradientIsObjectiveGradient)
{
    const CoefficientSet c = build_family(Family::IQP, 4, 6, 1);
    const Matrix xi = sample_instances(c, 5, 2);
    Tape tape;
    const Var x = tape.leaf(Rng(1).uniform_matrix(5, 4, -5.0, 5.0));
    const LossNodes l = penalty_loss(tape, c, xi, x, 0.0);
    ASSERT_GT(l.penalty.item(), 0.0);
    EXPECT_EQ(tape.backward(l.total)[x], tape.backward(l.objective)[x]);
}

TEST(TrainingConfig, Validation)
{
    TrainingConfig t;
    EXPECT_NO_THROW(t.validate());
    t.batch = 1;
    EXPECT_THROW(t.validate(), std::invalid_argument);
    t = {};
    t.lambda = -1.0;
    EXPECT_THROW(t.validate(), std::invalid_argument);
}

TEST(Dataset, SplitsAreDeterministicAndDistinct)
{
    const CoefficientSet c = build_family(Family::IQP, 4, 3, 2);
    const Dataset a = make_dataset(c, 10, 10, 10, 7);
    EXPECT_EQ(a, make_dataset(c, 10, 10, 10, 7));
    EXPECT_NE(a.train, a.val);
    EXPECT_NE(a.val, a.test);
    EXPECT_NE(a, make_dataset(c, 10, 10, 10, 8));
}

TEST(Model, InitShapes)
{
    const CoefficientSet c = build_family(Family::MIRB, 2, 0, 1);
    const ModelWeights w = init_model(c, method(CorrectionMethod::RC), 1);
    EXPECT_EQ(w.solution_map.spec.widths, (std::vector<Index>{3, 4, 4, 4, 4, 4}));
    EXPECT_EQ(w.correction_net.spec.widths, (std::vector<Index>{7, 4, 4, 4, 4}));
    EXPECT_EQ(init_model(c, method(CorrectionMethod::RC), 1, 32).solution_map.spec.widths[1], 32);
}

TEST(Training, HistoryIsBitIdenticalAcrossRuns)
{
    SmallIqp s;
    const ModelWeights init = init_model(s.coeffs, method(CorrectionMethod::RC), 3, 16);
    const TrainingResult a = train(s.coeffs, s.data, init, quick(5));
    const TrainingResult b = train(s.coeffs, s.data, init, quick(5));
    ASSERT_EQ(a.history.epochs.size(), b.history.epochs.size());
    for (std::size_t i = 0; i < a.history.epochs.size(); ++i) {
        EXPECT_EQ(a.history.epochs[i].train_loss, b.history.epochs[i].train_loss);
        EXPECT_EQ(a.history.epochs[i].val_loss, b.history.epochs[i].val_loss);
    }
    EXPECT_EQ(a.weights, b.weights);
}

TEST(Training, RoundingMethodsLeaveCorrectionNetUntouched)
{
    SmallIqp s;
    for (CorrectionMethod m : {CorrectionMethod::RL, CorrectionMethod::RS}) {
        const ModelWeights init = init_model(s.coeffs, method(m), 3, 16);
        const TrainingResult r = train(s.coeffs, s.data, init, quick(3));
        EXPECT_EQ(r.weights.correction_net, init.correction_net) << to_string(m);
        if (r.history.best_epoch > 0) {
            EXPECT_NE(r.weights.solution_map, init.solution_map) << to_string(m);
        }
    }
}

TEST(Training, RelaxedLossHasNoCorrectionNetPath)
{
    // Under RL the loss graph never reaches delta, so its gradient is exactly zero.
    SmallIqp s;
    const ModelWeights w = init_model(s.coeffs, method(CorrectionMethod::RL), 3, 16);
    Tape tape;
    const MlpBinding pi = bind(tape, w.solution_map, true);
    const MlpBinding delta = bind(tape, w.correction_net, true);
    const Var xbar = forward(tape, w.solution_map, pi, tape.constant(s.data.train.topRows(8)), ForwardMode::Train);
    const LossNodes l = penalty_loss(tape, s.coeffs, s.data.train.topRows(8), xbar, 100.0);
    const Gradients g = tape.backward(l.total);
    for (const Var& p : delta.params) EXPECT_FALSE(g.contains(p));
}

TEST(Training, LearnedCorrectionUpdatesBothNetworks)
{
    SmallIqp s;
    for (CorrectionMethod m : {CorrectionMethod::RC, CorrectionMethod::LT}) {
        const ModelWeights init = init_model(s.coeffs, method(m), 3, 16);
        TrainingConfig cfg = quick(3);
        cfg.patience = 100;
        const TrainingResult r = train(s.coeffs, s.data, init, cfg);
        if (r.history.best_epoch == 0) continue; // initial weights kept
        EXPECT_NE(r.weights.correction_net, init.correction_net) << to_string(m);
        EXPECT_NE(r.weights.solution_map, init.solution_map) << to_string(m);
    }
}

TEST(Training, ReturnsBestValidationWeights)
{
    SmallIqp s;
    TrainingConfig cfg = quick(40);
    cfg.patience = 5;
    cfg.lr = 5e-3;
    const ModelWeights init = init_model(s.coeffs, method(CorrectionMethod::RC), 3, 16);
    const TrainingResult r = train(s.coeffs, s.data, init, cfg);
    double best = r.history.initial_val_loss;
    int best_epoch = 0;
    for (const auto& e : r.history.epochs) {
        if (e.val_loss < best) {
            best = e.val_loss;
            best_epoch = e.epoch;
        }
    }
    EXPECT_EQ(r.history.best_val_loss, best);
    EXPECT_EQ(r.history.best_epoch, best_epoch);
    EXPECT_EQ(validation_loss(s.coeffs, s.data.val, r.weights, cfg.lambda).total, best);
    // Early stopping: at most `patience` epochs after the best one.
    EXPECT_LE(static_cast<int>(r.history.epochs.size()), std::max(best_epoch, 0) + cfg.patience);
}

TEST(Training, RosenbrockSmokeImprovesValidationLoss)
{
    const CoefficientSet c = build_family(Family::Rosenbrock2D, 1, 0, 0);
    const Dataset data = make_dataset(c, 800, 200, 10, 1);
    TrainingConfig cfg;
    cfg.epochs = 50;
    cfg.seed = 1;
    const TrainingResult r = train(c, data, init_model(c, method(CorrectionMethod::RC), 1), cfg);
    ASSERT_FALSE(r.history.epochs.empty());
    EXPECT_LT(r.history.epochs.back().val_loss, r.history.initial_val_loss);
    EXPECT_LT(r.history.best_val_loss, r.history.initial_val_loss);
}

TEST(Training, RejectsMismatchedDataset)
{
    SmallIqp s;
    const CoefficientSet other = build_family(Family::IQP, 4, 5, 2);
    EXPECT_THROW(train(other, s.data, init_model(other, method(CorrectionMethod::RC), 1, 8), quick(1)), ShapeError);
}

TEST(Metrics, FeasibleFractionCountsTolerance)
{
    std::vector<InstanceRecord> recs(3);
    recs[0].violation = 0.0;
    recs[1].violation = 0.0;
    recs[2].violation = 0.2;
    recs[0].obj = 1.0;
    recs[1].obj = 5.0;
    recs[2].obj = 3.0;
    const Metrics m = summarize(recs, 1e-6);
    EXPECT_DOUBLE_EQ(m.feasible_frac, 2.0 / 3.0);
    EXPECT_DOUBLE_EQ(m.obj_mean, 3.0);
    EXPECT_DOUBLE_EQ(m.obj_median, 3.0);
}

TEST(Metrics, AllFeasibleTestSet)
{
    const CoefficientSet c = build_family(Family::IQP, 4, 3, 2);
    const Matrix test = Matrix::Constant(5, 3, 100.0);
    for (CorrectionMethod m : {CorrectionMethod::RC, CorrectionMethod::LT, CorrectionMethod::RS,
                               CorrectionMethod::RL}) {
        const ModelWeights w = init_model(c, method(m), 1, 8);
        const Metrics pre = evaluate(c, test, w, 1e-6);
        EXPECT_EQ(pre.feasible_frac, 1.0) << to_string(m);
        const Metrics post = evaluate(c, test, w, 1e-6, ProjectionConfig{});
        EXPECT_EQ(post.feasible_frac, 1.0);
        for (const auto& r : post.instances) EXPECT_EQ(r.proj_iters, 0);
    }
}

TEST(Metrics, EvaluationRecordsAreConsistent)
{
    SmallIqp s;
    const ModelWeights w = init_model(s.coeffs, method(CorrectionMethod::LT), 3, 16);
    const Metrics m = evaluate(s.coeffs, s.data.test, w, 1e-6);
    ASSERT_EQ(m.instances.size(), 16u);
    const Matrix sols = corrected_solutions(s.coeffs, w, s.data.test);
    for (const auto& r : m.instances) {
        const Vector xi = s.data.test.row(r.idx).transpose();
        EXPECT_EQ(r.solution, Vector(sols.row(r.idx).transpose()));
        EXPECT_EQ(r.obj, objective(s.coeffs, xi, r.solution));
        EXPECT_EQ(r.violation, violation(constraints(s.coeffs, xi, r.solution)));
        EXPECT_GE(r.time_s, 0.0);
    }
}
