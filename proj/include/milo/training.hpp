#pragma once

// Self-supervised training of the relaxed-solution map pi and the correction
// net delta against
//
//   L = mean_batch [ f(x_hat, xi) + lambda |g(x_hat, xi)_+|_1 ]
//
// where x_hat is the corrected output (RC, LT, RS) or the relaxed output (RL).

#include "milo/correction.hpp"
#include "milo/net.hpp"
#include "milo/problems.hpp"
#include "milo/projection.hpp"

#include <cstdint>
#include <optional>
#include <vector>

namespace milo {

/// pi maps xi to x_bar; delta maps [x_bar, xi] to corrections. RS and RL
/// carry an initialized delta that training never touches.
struct ModelWeights {
    CorrectionConfig correction;
    MlpWeights solution_map;
    MlpWeights correction_net;

    friend bool operator==(const ModelWeights&, const ModelWeights&) = default;
};

/// Fresh weights sized for the family; hidden = 0 picks hidden_width_for.
ModelWeights init_model(const CoefficientSet& coeffs, const CorrectionConfig& correction, std::uint64_t seed,
                        Index hidden = 0);

struct TrainingConfig {
    double lambda = 100.0;
    double lr = 1e-3;
    Index batch = 64;
    int epochs = 200;
    int patience = 20;
    std::uint64_t seed = 0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    double weight_decay = 0.01;

    void validate() const;
};

/// Instance parameters, one row per instance.
struct Dataset {
    Matrix train;
    Matrix val;
    Matrix test;

    friend bool operator==(const Dataset&, const Dataset&) = default;
};

/// Splits drawn from independent streams derived from `seed`.
Dataset make_dataset(const CoefficientSet& coeffs, Index n_train, Index n_val, Index n_test, std::uint64_t seed);

struct LossBreakdown {
    double total = 0.0;
    double objective = 0.0;
    double penalty = 0.0; // mean violation, before lambda
};

struct LossNodes {
    Var total;
    Var objective;
    Var penalty;

    LossBreakdown values() const { return {total.item(), objective.item(), penalty.item()}; }
};

/// Differentiable loss over a B x n_vars batch of solutions.
LossNodes penalty_loss(Tape& tape, const CoefficientSet& coeffs, const Matrix& params, Var x_hat, double lambda);
LossBreakdown penalty_loss(const CoefficientSet& coeffs, const Matrix& params, const Matrix& x_hat, double lambda);

struct EpochRecord {
    int epoch = 0;
    double train_loss = 0.0;
    double val_loss = 0.0;
};

struct TrainingHistory {
    double initial_val_loss = 0.0;
    std::vector<EpochRecord> epochs;
    int best_epoch = 0; // 0 means the initial weights were never improved on
    double best_val_loss = 0.0;
};

struct TrainingResult {
    ModelWeights weights;
    TrainingHistory history;
};

/// AdamW on pi (and delta for RC/LT) with early stopping on validation loss.
/// Returns the weights with the lowest validation loss seen.
TrainingResult train(const CoefficientSet& coeffs, const Dataset& data, ModelWeights initial,
                     const TrainingConfig& config);

/// Eval-mode loss on a parameter batch, noise off.
LossBreakdown validation_loss(const CoefficientSet& coeffs, const Matrix& params, const ModelWeights& weights,
                              double lambda);

/// Eval-mode relaxed solutions, one row per parameter row.
Matrix relaxed_solutions(const ModelWeights& weights, const Matrix& params);

/// Eval-mode corrected solutions (RL and RS round the relaxation).
Matrix corrected_solutions(const CoefficientSet& coeffs, const ModelWeights& weights, const Matrix& params);

struct InstanceRecord {
    Index idx = 0;
    double obj = 0.0;
    double violation = 0.0;
    double time_s = 0.0;
    int proj_iters = 0;
    Vector solution;
    Vector constraints;
};

struct Metrics {
    double obj_mean = 0.0;
    double obj_median = 0.0;
    double feasible_frac = 0.0;
    double mean_time_s = 0.0;
    std::vector<InstanceRecord> instances;
};

/// Aggregates per-instance records; feasible means violation <= tol.
Metrics summarize(std::vector<InstanceRecord> records, double tol);

/// Per-instance forward + correction (+ projection when given), timed.
Metrics evaluate(const CoefficientSet& coeffs, const Matrix& test, const ModelWeights& weights, double tol,
                 const std::optional<ProjectionConfig>& projection = std::nullopt);

} // namespace milo
