#pragma once

// Fully connected networks on the tape: affine -> [batch-norm] -> ReLU ->
// [dropout] for every hidden layer, affine only for the last layer.
// Weights follow the (out x in) convention, so a layer computes X W^T + b.

#include "milo/diff.hpp"
#include "milo/problems.hpp"
#include "milo/rng.hpp"

#include <cstdint>
#include <optional>
#include <vector>

namespace milo {

enum class ForwardMode { Train, Eval };

struct MlpSpec {
    std::vector<Index> widths; // input, hidden..., output
    bool batch_norm = false;
    double dropout = 0.0;

    Index layer_count() const noexcept { return widths.empty() ? 0 : static_cast<Index>(widths.size()) - 1; }
    Index input_width() const { return widths.front(); }
    Index output_width() const { return widths.back(); }
    void validate() const;

    friend bool operator==(const MlpSpec&, const MlpSpec&) = default;
};

/// Relaxed-solution map: five fully connected layers, ReLU, no normalization.
MlpSpec solution_map_spec(Index input, Index hidden, Index output);
/// Correction net: four fully connected layers with batch-norm and dropout 0.2.
MlpSpec correction_net_spec(Index input, Index hidden, Index output);

/// Hidden width scaled with problem size. IQP/INP double from 64 at 20x20 to
/// 2048 at 1000x1000 (nearest listed size wins); MIRB grows from 4 at n = 2
/// through 16 at n = 20 to 1024 at n = 10000, log-interpolated and rounded
/// to a power of two.
Index hidden_width_for(Family family, Index n, Index m);

struct BatchNormParams {
    Matrix gamma; // 1 x d
    Matrix beta;  // 1 x d
    RowVector running_mean;
    RowVector running_var;

    friend bool operator==(const BatchNormParams&, const BatchNormParams&) = default;
};

struct DenseLayer {
    Matrix weight; // out x in
    Matrix bias;   // 1 x out
    std::optional<BatchNormParams> norm;

    friend bool operator==(const DenseLayer&, const DenseLayer&) = default;
};

struct MlpWeights {
    MlpSpec spec;
    std::vector<DenseLayer> layers;

    /// Trainable matrices in a fixed order: per layer W, b, then gamma, beta.
    std::vector<Matrix*> parameters();
    std::vector<const Matrix*> parameters() const;

    friend bool operator==(const MlpWeights&, const MlpWeights&) = default;
};

/// Fan-in scaled uniform weights U(-1/sqrt(in), 1/sqrt(in)); zero biases;
/// batch-norm scale 1, shift 0, running mean 0, running variance 1.
MlpWeights init_mlp(const MlpSpec& spec, std::uint64_t seed);

/// Tape handles for the parameters, in `MlpWeights::parameters()` order.
struct MlpBinding {
    std::vector<Var> params;
};

/// Places parameters on the tape as leaves (trainable) or constants.
MlpBinding bind(Tape& tape, const MlpWeights& weights, bool trainable);

/// Runs the stack. In Train mode batch-norm uses batch statistics (collected
/// into `stats` when given) and dropout draws masks from `dropout_rng`
/// (dropout is skipped when the rng is null).
Var forward(Tape& tape, const MlpWeights& weights, const MlpBinding& binding, Var input, ForwardMode mode,
            Rng* dropout_rng = nullptr, std::vector<BatchStats>* stats = nullptr);

/// Eval-mode forward of a B x in batch.
Matrix forward(const MlpWeights& weights, const Matrix& batch);

/// Exponential moving update of running statistics (momentum on the new
/// value); variance is stored unbiased.
void update_running_stats(MlpWeights& weights, const std::vector<BatchStats>& stats, Index batch_size,
                          double momentum = 0.1);

/// Largest singular value by power iteration.
double spectral_norm(const Matrix& m, int max_iter = 50, double tol = 1e-8);

/// Upper bound on the input-output Jacobian norm of an eval-mode network:
/// product of layer spectral norms times the batch-norm scale factors.
double jacobian_norm_bound(const MlpWeights& weights);

} // namespace milo
