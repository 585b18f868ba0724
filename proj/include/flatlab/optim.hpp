#pragma once

#include <cstddef>
#include <deque>
#include <iosfwd>
#include <optional>
#include <string_view>
#include <vector>

#include "flatlab/models.hpp"
#include "flatlab/params.hpp"
#include "flatlab/rng.hpp"

namespace flatlab {

/// Any |w_i| above this aborts a run with a DivergenceError.
inline constexpr double kDivergenceBound = 1e6;

enum class InnerKind { sgd, adam };

struct InnerOptConfig {
    InnerKind kind = InnerKind::sgd;
    double eta = 5e-4;
    double momentum = 0.0;  // sgd only
    double weight_decay = 0.0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;

    void validate() const;
};

/// Moment buffers of the inner optimizer. Persist across Lookahead outer steps.
struct InnerOptState {
    std::optional<ParamVec> momentum;
    std::optional<ParamVec> adam_m;
    std::optional<ParamVec> adam_v;
    std::size_t adam_t = 0;
};

/// SGD: w <- w - eta * buf, buf = momentum * buf + (g + wd * w).
/// Adam: bias-corrected moments with L2 weight decay folded into g.
void inner_step(InnerOptState& state, const InnerOptConfig& cfg, ParamVec& weights, const ParamVec& grad);

enum class LookaheadVariant { plain, avg, reg };

struct LookaheadConfig {
    InnerOptConfig inner{InnerKind::adam, 5e-4};
    double alpha = 0.05;
    std::size_t k = 15;
    LookaheadVariant variant = LookaheadVariant::plain;
    std::vector<double> beta;  // avg variant; empty means uniform 1/k
    double lambda = 0.01;      // reg variant
    std::size_t history_window = 10;
    double noise_strength = 0.0;

    void validate() const;
    /// Inner-loop averaging weights (beta or uniform).
    [[nodiscard]] std::vector<double> averaging_weights() const;
};

struct SamConfig {
    double rho = 0.05;
    InnerOptConfig inner;

    void validate() const;
};

struct OptimizerState {
    explicit OptimizerState(ParamVec initial) : weights(std::move(initial)) {}

    ParamVec weights;  // slow weight for Lookahead, current weight otherwise
    InnerOptState inner;
    std::size_t outer_steps = 0;
    std::size_t inner_steps = 0;
    std::deque<ParamVec> reg_history;  // last history_window slow weights
    std::optional<RunningAverage> swa;
};

struct TrajectoryRow {
    std::size_t outer_step = 0;
    std::size_t inner_step = 0;
    double loss = 0.0;
    double grad_norm = 0.0;
    double weight_norm = 0.0;
};

struct Trajectory {
    std::vector<TrajectoryRow> rows;
};

/// CSV `outer_step,inner_step,loss,grad_norm,weight_norm`.
void write_trajectory_csv(std::ostream& out, const Trajectory& trajectory);

struct OuterStepReport {
    /// max |interpolation - (theta - alpha (theta - mean))| for the avg variant;
    /// the two algebraic forms of the same update.
    double entropy_form_gap = 0.0;
};

/// One Lookahead outer iteration: k inner steps from the slow weight, each on a
/// fresh batch, then interpolation of the slow weight towards the end weight
/// (plain, reg) or towards the weighted inner-loop mean (avg). `noise_rng`
/// drives the optional filter-wise weight noise.
OuterStepReport lookahead_outer_step(OptimizerState& state, const LookaheadConfig& cfg,
                                     StochasticObjective& objective, Rng& noise_rng, Trajectory* trajectory = nullptr);

/// One plain inner-optimizer step on a fresh batch (ERM baseline). Rows use
/// the same (outer_step, inner_step = 0) indexing as Lookahead with k = 1.
void erm_step(OptimizerState& state, const InnerOptConfig& cfg, StochasticObjective& objective,
              Trajectory* trajectory = nullptr);

/// Sharpness-aware step: ascend to w + rho g/|g|, then apply the inner
/// optimizer with the gradient taken there (same batch).
void sam_step(OptimizerState& state, const SamConfig& cfg, StochasticObjective& objective,
              Trajectory* trajectory = nullptr);

/// Folds `weights` into the dense SWA average.
void swa_update(OptimizerState& state, const ParamVec& weights);

/// Throws DivergenceError on non-finite or |w_i| > kDivergenceBound.
void check_divergence(const ParamVec& weights, std::size_t outer_step, std::size_t inner_step);

[[nodiscard]] std::string_view to_string(InnerKind kind) noexcept;
[[nodiscard]] std::string_view to_string(LookaheadVariant variant) noexcept;

}  // namespace flatlab
