#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "flatlab/models.hpp"
#include "flatlab/optim.hpp"
#include "flatlab/theory.hpp"

namespace flatlab {

// ---------------------------------------------------------------------------
// Vectorized noisy-quadratic chains. Every inner step draws one center per
// chain and feeds it to three chain families (plain SGD, Lookahead, and
// AvgLookahead with post-step snapshots), so the families share noise but each
// is an exact simulation of its own optimizer with SGD inner steps.

struct EnsembleConfig {
    double eta = 0.1;
    double alpha = 0.05;
    std::size_t k = 15;
    std::vector<double> beta;  // empty means uniform
};

class QuadraticEnsemble {
public:
    QuadraticEnsemble(QuadraticSpec spec, EnsembleConfig cfg, std::size_t chains, std::uint64_t seed);

    /// k inner steps for every chain, then the outer interpolation.
    void outer_step();

    [[nodiscard]] std::size_t chains() const noexcept { return chains_; }
    [[nodiscard]] std::size_t dim() const noexcept { return dim_; }
    [[nodiscard]] double sgd(std::size_t chain, std::size_t coord) const { return sgd_[chain * dim_ + coord]; }
    [[nodiscard]] double lookahead(std::size_t chain, std::size_t coord) const { return la_[chain * dim_ + coord]; }
    [[nodiscard]] double avg_lookahead(std::size_t chain, std::size_t coord) const {
        return avg_[chain * dim_ + coord];
    }

private:
    QuadraticSpec spec_;
    EnsembleConfig cfg_;
    std::vector<double> beta_;
    std::size_t chains_;
    std::size_t dim_;
    Rng rng_;
    std::vector<double> sgd_;
    std::vector<double> la_;
    std::vector<double> avg_;
};

struct VarianceMcOptions {
    std::size_t chains = 50000;
    std::size_t burn_in = 500;
    std::size_t measured = 500;
    std::uint64_t seed = 0;
};

struct VarianceEstimate {
    std::vector<double> sgd;  // per coordinate
    std::vector<double> lookahead;
    std::vector<double> avg_lookahead;
};

/// Cross-chain variance of the slow weight, averaged over the measured outer
/// steps after burn-in. SGD is sampled at the same outer-step boundaries.
[[nodiscard]] VarianceEstimate monte_carlo_stationary_variance(const QuadraticSpec& spec, const EnsembleConfig& cfg,
                                                               const VarianceMcOptions& options);

// ---------------------------------------------------------------------------
// Scalar stability chains.

struct ChainOutcome {
    bool diverged = false;
    std::size_t steps_run = 0;
    double max_abs = 0.0;
};

/// Plain SGD on one noisy quadratic coordinate from `start`, up to `steps`
/// steps; divergence when |w| > kDivergenceBound.
[[nodiscard]] ChainOutcome simulate_sgd_chain(double eta, double h, double sigma2, double start, std::size_t steps,
                                              Rng& rng);
/// Plain Lookahead (SGD inner) for `outer_steps` outer steps.
[[nodiscard]] ChainOutcome simulate_lookahead_chain(double eta, double h, double sigma2, double alpha, std::size_t k,
                                                    double start, std::size_t outer_steps, Rng& rng);

struct StabilityRow {
    double alpha = 0.0;
    double h = 0.0;
    bool sgd_stable = false;
    bool paper_threshold_ok = false;
    bool exact_stable = false;
    bool mc_diverged = false;  // Lookahead chain
    bool sgd_mc_diverged = false;
};

struct StabilityMapOptions {
    double eta = 0.1;
    std::vector<double> alphas{0.05, 0.5};
    std::size_t k = 3;
    double h_min = 0.5;
    double h_max = 50.0;
    std::size_t n_h = 100;
    double sigma2 = 1.0;
    double start = 1.0;
    std::size_t steps = 10000;
    std::uint64_t seed = 0;
};

/// Midpoint grid of n_h values over [h_min, h_max] for every alpha.
[[nodiscard]] std::vector<StabilityRow> stability_map(const StabilityMapOptions& options);

/// n midpoints strictly inside (lo, hi).
[[nodiscard]] std::vector<double> midpoint_grid(double lo, double hi, std::size_t n);

// ---------------------------------------------------------------------------
// Training drivers.

enum class OptimizerKind { erm, lookahead, sam, swa };

struct OptimizerSpec {
    std::string name;
    OptimizerKind kind = OptimizerKind::erm;
    InnerOptConfig inner;
    LookaheadConfig lookahead;  // kind == lookahead
    double rho = 0.05;          // kind == sam
    std::size_t swa_start = 0;  // kind == swa, in gradient steps
    std::size_t swa_every = 1;

    void validate() const;
};

struct TrainOptions {
    std::size_t gradient_steps = 1500;  // Lookahead runs gradient_steps / k outer steps
    std::uint64_t noise_seed = 0;
    std::size_t checkpoint_every = 0;  // outer steps; 0 disables
};

struct TrainResult {
    ParamVec initial;
    ParamVec final_weights;  // slow weight, or the SWA average
    Trajectory trajectory;
    std::vector<std::pair<std::size_t, ParamVec>> checkpoints;  // (outer step, weights)
    bool diverged = false;
    std::string divergence;
    double max_entropy_form_gap = 0.0;
};

/// Runs one optimizer from `initial` on `objective`. Divergence ends the run and
/// is recorded, not thrown.
[[nodiscard]] TrainResult train(const OptimizerSpec& spec, StochasticObjective& objective, const ParamVec& initial,
                                const TrainOptions& options);

// ---------------------------------------------------------------------------
// Rotated-domain MLP task shared by the diversity, sharpness and shift studies.

struct DomainTask {
    MlpSpec mlp{{2, 16, 16, 4}, Activation::tanh, 0, 1.0};
    std::vector<double> source_angles{0.0, 10.0};
    std::vector<double> target_angles{25.0};
    std::size_t n_per_domain = 256;
    std::size_t batch_size = 32;
    std::uint64_t data_seed = 7;

    void validate() const;
};

struct DomainData {
    DomainDataset source;       // training pool (all source angles)
    DomainDataset source_eval;  // held-out source samples
    DomainDataset target;       // unseen domain(s)
};

/// Row-wise concatenation; domain_param is taken from the first part.
[[nodiscard]] DomainDataset concat_datasets(std::span<const DomainDataset> parts);

[[nodiscard]] DomainData make_domain_data(const DomainTask& task);
/// Network spec for a seed (init_seed derived from the seed).
[[nodiscard]] MlpSpec seeded_mlp(const DomainTask& task, std::uint64_t seed);

struct DiversityRow {
    std::uint64_t seed = 0;
    double eta = 0.0;
    double cka_in = 0.0;
    double cka_out = 0.0;
    double pred_div_in = 0.0;
    double pred_div_out = 0.0;
};

struct DiversityOptions {
    InnerOptConfig inner{InnerKind::adam, 5e-4};
    double eta_multiplier = 10.0;
    std::size_t k = 15;
    // The shared starting weight is the seeded MLP trained this many steps on
    // the source domain (the desk-scale stand-in for a pretrained backbone).
    // Zero uses the raw initialization.
    std::size_t pretrain_steps = 2000;
    InnerOptConfig pretrain{InnerKind::adam, 1e-2};
};

/// From one seeded, pretrained starting weight, trains k steps with eta and
/// with eta_multiplier * eta on identical batch streams, and compares each
/// result to the starting weight (penultimate-layer CKA, prediction diversity).
[[nodiscard]] std::vector<DiversityRow> diversity_experiment(const DomainTask& task, const DomainData& data,
                                                             const DiversityOptions& options, std::uint64_t seed);

/// Final lambda_max (full source set) after training `spec` from the seeded init.
struct SharpnessResult {
    double lambda_max = 0.0;
    bool converged = false;
    bool diverged = false;
    double final_loss = 0.0;
    double source_accuracy = 0.0;
    double target_accuracy = 0.0;
    std::optional<ParamVec> weights;
};

[[nodiscard]] SharpnessResult train_and_measure_sharpness(const DomainTask& task, const DomainData& data,
                                                          const OptimizerSpec& spec, std::uint64_t seed,
                                                          std::size_t gradient_steps, std::size_t power_iters,
                                                          double power_tol);

// ---------------------------------------------------------------------------
// Local-entropy checks.

struct EntropyCheckRow {
    std::size_t query = 0;
    double gamma = 0.0;
    double fd_rel_err = 0.0;        // entropy_grad vs central differences of entropy_value
    double fixed_point_grad = 0.0;  // |grad| after iterating the interpolation rule
    std::size_t fixed_point_iters = 0;
    double sampler_mean_err = 0.0;  // SGD stationary mean vs Gibbs mean, relative
};

struct EntropyCheckOptions {
    std::size_t n_queries = 100;
    std::size_t dim = 5;
    double step_size = 0.5;  // interpolation coefficient in theta <- (1 - s) theta + s E[theta']
    std::size_t sampler_steps = 20000;
    double sampler_eta = 0.05;
    std::uint64_t seed = 0;
};

[[nodiscard]] std::vector<EntropyCheckRow> entropy_check(const EntropyCheckOptions& options);

/// Relative error of entropy_grad against central differences of entropy_value.
[[nodiscard]] double entropy_fd_rel_error(const theory::EntropyQuery& q, double step = 1e-5);

/// Iterates theta <- (1 - s) theta + s E[theta'] until |grad| < tol.
struct EntropyFixedPoint {
    std::vector<double> theta;
    double grad_norm = 0.0;
    std::size_t iterations = 0;
};
[[nodiscard]] EntropyFixedPoint entropy_fixed_point(theory::EntropyQuery q, double step_size, double tol = 1e-10,
                                                    std::size_t max_iters = 100000);

// ---------------------------------------------------------------------------
// Statistics helpers.

[[nodiscard]] double median(std::vector<double> values);
/// Linear-interpolated quantile, q in [0, 1].
[[nodiscard]] double quantile(std::vector<double> values, double q);

}  // namespace flatlab
