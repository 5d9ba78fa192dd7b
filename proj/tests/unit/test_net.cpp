#include "milo/net.hpp"

#include <Eigen/SVD>
#include <gtest/gtest.h>

#include <cmath>

using namespace milo;

namespace {

MlpWeights randomized_bn_net(std::uint64_t seed)
{
    MlpWeights w = init_mlp(correction_net_spec(5, 8, 3), seed);
    Rng rng(seed + 100);
    for (auto& layer : w.layers) {
        if (layer.norm) {
            layer.norm->gamma = rng.uniform_matrix(1, layer.norm->gamma.cols(), 0.5, 1.5);
            layer.norm->beta = rng.uniform_matrix(1, layer.norm->beta.cols(), -0.3, 0.3);
            layer.norm->running_mean = rng.uniform_matrix(1, layer.norm->gamma.cols(), -0.2, 0.2);
            layer.norm->running_var = rng.uniform_matrix(1, layer.norm->gamma.cols(), 0.5, 2.0);
        }
    }
    return w;
}

} // namespace

TEST(Mlp, WeightShapes)
{
    const MlpWeights w = init_mlp({{2, 4, 1}, false, 0.0}, 0);
    ASSERT_EQ(w.layers.size(), 2u);
    EXPECT_EQ(w.layers[0].weight.rows(), 4);
    EXPECT_EQ(w.layers[0].weight.cols(), 2);
    EXPECT_EQ(w.layers[1].weight.rows(), 1);
    EXPECT_EQ(w.layers[1].weight.cols(), 4);
    EXPECT_EQ(w.layers[0].bias, Matrix::Zero(1, 4));
}

TEST(Mlp, InitIsFanInScaledUniform)
{
    const MlpWeights w = init_mlp(solution_map_spec(16, 32, 4), 3);
    for (const auto& layer : w.layers) {
        const double bound = 1.0 / std::sqrt(static_cast<double>(layer.weight.cols()));
        EXPECT_LE(layer.weight.cwiseAbs().maxCoeff(), bound);
    }
}

TEST(Mlp, SeedDeterminism)
{
    const MlpSpec spec = correction_net_spec(6, 8, 2);
    EXPECT_EQ(init_mlp(spec, 42), init_mlp(spec, 42));
    EXPECT_NE(init_mlp(spec, 42), init_mlp(spec, 43));
}

TEST(Mlp, SpecValidation)
{
    EXPECT_THROW((MlpSpec{{3}, false, 0.0}.validate()), std::invalid_argument);
    EXPECT_THROW((MlpSpec{{3, 0, 1}, false, 0.0}.validate()), std::invalid_argument);
    EXPECT_THROW((MlpSpec{{3, 2, 1}, false, 1.0}.validate()), std::invalid_argument);
}

TEST(Mlp, ArchitectureDefaults)
{
    const MlpSpec pi = solution_map_spec(20, 64, 20);
    EXPECT_EQ(pi.layer_count(), 5);
    EXPECT_FALSE(pi.batch_norm);
    EXPECT_EQ(pi.dropout, 0.0);
    const MlpSpec delta = correction_net_spec(40, 64, 20);
    EXPECT_EQ(delta.layer_count(), 4);
    EXPECT_TRUE(delta.batch_norm);
    EXPECT_EQ(delta.dropout, 0.2);
}

TEST(Mlp, ZeroWeightsGiveZeroOutput)
{
    MlpWeights w = init_mlp(solution_map_spec(3, 5, 2), 0);
    for (Matrix* p : w.parameters()) p->setZero();
    EXPECT_EQ(forward(w, Matrix::Random(4, 3)), Matrix::Zero(4, 2));
}

TEST(Mlp, EvalIsDeterministic)
{
    const MlpWeights w = randomized_bn_net(1);
    const Matrix x = Rng(2).uniform_matrix(6, 5, -1.0, 1.0);
    EXPECT_EQ(forward(w, x), forward(w, x));
}

TEST(Mlp, EvalBatchNormRowsAreIndependent)
{
    const MlpWeights w = randomized_bn_net(4);
    const Matrix x = Rng(5).uniform_matrix(7, 5, -1.0, 1.0);
    const Matrix whole = forward(w, x);
    for (Index r = 0; r < x.rows(); ++r) {
        EXPECT_EQ(forward(w, x.row(r)), whole.row(r));
    }
}

TEST(Mlp, EvalInputGradientMatchesFiniteDifferences)
{
    const MlpWeights w = randomized_bn_net(7);
    const Matrix read = Rng(8).uniform_matrix(4, 3, -1.0, 1.0);
    const GraphFn graph = [&](Tape& t, Var x) {
        const Var y = forward(t, w, bind(t, w, false), x, ForwardMode::Eval);
        return sum(mul(y, t.constant(read)));
    };
    EXPECT_LE(grad_check(graph, Rng(9).uniform_matrix(4, 5, -1.0, 1.0)), 1e-5);
}

TEST(Mlp, TrainModeParameterGradientsMatchFiniteDifferences)
{
    // Perturb the first weight matrix through a leaf and compare with autodiff.
    const MlpWeights base = randomized_bn_net(10);
    const Matrix x = Rng(11).uniform_matrix(6, 5, -1.0, 1.0);
    const Matrix read = Rng(12).uniform_matrix(6, 3, -1.0, 1.0);
    const GraphFn graph = [&](Tape& t, Var w0) {
        MlpBinding b = bind(t, base, false);
        b.params[0] = w0;
        const Var y = forward(t, base, b, t.constant(x), ForwardMode::Train);
        return sum(mul(y, t.constant(read)));
    };
    EXPECT_LE(grad_check(graph, base.layers[0].weight), 1e-5);
}

TEST(Mlp, InvertedDropoutStatistics)
{
    // One hidden layer with positive activations and an identity read-out,
    // so the output is the masked hidden layer itself.
    MlpWeights w = init_mlp({{1, 400, 400}, false, 0.2}, 0);
    w.layers[0].weight.setOnes();
    w.layers[0].bias.setConstant(1.0);
    w.layers[1].weight.setIdentity();
    w.layers[1].bias.setZero();
    Rng rng(13);
    Tape tape;
    const Matrix x = Matrix::Constant(50, 1, 1.0);
    const Matrix y = forward(tape, w, bind(tape, w, false), tape.constant(x), ForwardMode::Train, &rng).value();
    Index zeros = 0;
    for (Index i = 0; i < y.size(); ++i) {
        if (y(i) == 0.0) {
            ++zeros;
        } else {
            ASSERT_DOUBLE_EQ(y(i), 2.0 / 0.8);
        }
    }
    const double frac = static_cast<double>(zeros) / static_cast<double>(y.size());
    EXPECT_NEAR(frac, 0.2, 0.01);
    EXPECT_NEAR(y.mean(), forward(w, x).mean(), 0.02);
}

TEST(Mlp, RunningStatsMomentum)
{
    MlpWeights w = init_mlp(correction_net_spec(2, 3, 1), 0);
    BatchStats s{RowVector::Constant(3, 2.0), RowVector::Constant(3, 4.0)};
    update_running_stats(w, {s, s, s}, 5, 0.1);
    const auto& n = *w.layers[0].norm;
    EXPECT_NEAR(n.running_mean(0), 0.2, 1e-15);
    EXPECT_NEAR(n.running_var(0), 0.9 + 0.1 * 4.0 * 5.0 / 4.0, 1e-15);
}

TEST(Mlp, HiddenWidths)
{
    EXPECT_EQ(hidden_width_for(Family::IQP, 20, 20), 64);
    EXPECT_EQ(hidden_width_for(Family::INP, 20, 20), 64);
    EXPECT_EQ(hidden_width_for(Family::IQP, 1000, 1000), 2048);
    EXPECT_EQ(hidden_width_for(Family::MIRB, 2, 0), 4);
    EXPECT_EQ(hidden_width_for(Family::MIRB, 20, 0), 16);
    EXPECT_EQ(hidden_width_for(Family::MIRB, 10000, 0), 1024);
    EXPECT_EQ(hidden_width_for(Family::Rosenbrock2D, 1, 0), 4);
}

TEST(Mlp, SpectralNormMatchesSvd)
{
    Rng rng(21);
    for (int trial = 0; trial < 20; ++trial) {
        const Matrix m = rng.normal_matrix(6, 4, 0.0, 1.0);
        const double exact = Eigen::JacobiSVD<Matrix>(m).singularValues()(0);
        EXPECT_NEAR(spectral_norm(m, 500, 1e-14), exact, 1e-8 * exact);
    }
    EXPECT_EQ(spectral_norm(Matrix::Zero(3, 3)), 0.0);
}

TEST(Mlp, JacobianBoundDominatesObservedSlopes)
{
    const MlpWeights w = randomized_bn_net(30);
    const double bound = jacobian_norm_bound(w);
    Rng rng(31);
    for (int trial = 0; trial < 20; ++trial) {
        const Matrix x = rng.uniform_matrix(1, 5, -1.0, 1.0);
        const Matrix dx = rng.uniform_matrix(1, 5, -1e-4, 1e-4);
        const double ratio = (forward(w, x + dx) - forward(w, x)).norm() / dx.norm();
        EXPECT_LE(ratio, bound * (1.0 + 1e-6));
    }
}
