#pragma once

// Integer correction layers.
//
// Both learnable layers run a correction net h = delta([x_bar, xi]), shift the
// real part by h_r and round the integer part down, then add a binary
// direction b:
//
//   RC  v = sigmoid((h_z + e1 - e2) / tau),  e1, e2 ~ Gumbel(0, 1)
//   LT  v = sigmoid(beta * (frac(x_bar_z) - sigmoid(h_z)))
//
//   b = 1{v > 0.5},  x_hat_z = floor(x_bar_z) + b
//
// floor and the indicator are straight-through: their backward pass is the
// identity, so d b / d h equals d v / d h.
//
// RS rounds to nearest (halves down) with an identity backward; RL uses the
// same rounding but only after training.

#include "milo/diff.hpp"
#include "milo/net.hpp"
#include "milo/problems.hpp"
#include "milo/rng.hpp"

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace milo {

enum class CorrectionMethod { RC, LT, RS, RL };

std::string to_string(CorrectionMethod m);
/// Accepts "rc", "lt", "rs", "rl" (case-insensitive).
CorrectionMethod parse_method(std::string_view name);

/// True for methods that carry a correction net.
constexpr bool uses_correction_net(CorrectionMethod m) noexcept
{
    return m == CorrectionMethod::RC || m == CorrectionMethod::LT;
}

struct CorrectionConfig {
    CorrectionMethod method = CorrectionMethod::RC;
    double temperature = 1.0;
    double slope = 10.0;
    bool noise = true; // Gumbel noise during training; never used at inference

    void validate() const;
    friend bool operator==(const CorrectionConfig&, const CorrectionConfig&) = default;
};

struct CorrectionNodes {
    Var solution;   // B x n_vars, [x_real | x_int]
    Var soft;       // B x n_int soft values v (for RS/RL: the fractional part)
    Var directions; // B x n_int binary directions b
};

/// Builds phi(x_bar, xi) on the tape. `delta_binding` may be empty for RS/RL.
/// With `smooth` set, x_hat_z = floor(x_bar_z) + v instead of + b, and floor
/// is differentiated exactly (zero) rather than straight-through.
/// `rng` supplies Gumbel noise (RC, when config.noise) and dropout masks
/// (Train mode); null disables both.
CorrectionNodes apply_correction(Tape& tape, const Dimensions& dims, const MlpWeights& delta,
                                 const MlpBinding& delta_binding, Var xbar, Var xi, const CorrectionConfig& config,
                                 ForwardMode mode, Rng* rng = nullptr, std::vector<BatchStats>* stats = nullptr,
                                 bool smooth = false);

/// v = sigmoid((h + e1 - e2) / tau).
Var gumbel_sigmoid(Var h, const Matrix& noise1, const Matrix& noise2, double temperature);

struct CorrectionOutput {
    MixedIntegerSolution solution;
    Vector soft;
    Vector directions;
};

/// Rounding classification for one instance with an eval-mode correction net.
/// Noise is drawn from `noise_seed` when config.noise is set.
CorrectionOutput rc_correct(const Vector& xbar, const Vector& xi, const Dimensions& dims, const MlpWeights& delta,
                            const CorrectionConfig& config, std::uint64_t noise_seed = 0);

/// Learnable threshold for one instance with an eval-mode correction net.
CorrectionOutput lt_correct(const Vector& xbar, const Vector& xi, const Dimensions& dims, const MlpWeights& delta,
                            const CorrectionConfig& config);

/// Nearest-integer rounding of the integer slice; exact halves round down.
MixedIntegerSolution rs_round(const Vector& xbar, Index n_real);

/// Dispatches on config.method with noise disabled.
MixedIntegerSolution correct(const Vector& xbar, const Vector& xi, const Dimensions& dims, const MlpWeights& delta,
                             const CorrectionConfig& config);

/// Constants entering the step-size bound L = n_c (G_g L_phi + G_phi L_g).
struct LipschitzEstimate {
    double surrogate_bound = 0.0;        // 1/(6 sqrt(3) tau^2) for RC, beta/4 for LT
    double network_norm = 0.0;           // G_delta
    double correction_lipschitz = 0.0;   // L_phi
    double correction_jacobian = 0.0;    // G_phi
    double constraint_jacobian = 0.0;    // G_g
    double constraint_lipschitz = 0.0;   // L_g
    Index active_cap = 0;                // n_c bar
    double combined = 0.0;               // L
};

/// Max |d/dh| of the RC surrogate derivative (1/tau) v (1 - v): 1/(6 sqrt(3) tau^2).
double gumbel_curvature_bound(double temperature);

/// Fills the correction-layer part (surrogate bound, L_phi, G_phi).
/// Throws for RS/RL, which have no learnable surrogate.
LipschitzEstimate lipschitz_bound(const CorrectionConfig& config, double network_norm);

/// Completes an estimate with constraint bounds and the active-set cap.
LipschitzEstimate combine_lipschitz(LipschitzEstimate partial, const ConstraintBounds& bounds, Index active_cap);

} // namespace milo
