#include "flatlab/experiments.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

#include "flatlab/diversity.hpp"
#include "flatlab/error.hpp"
#include "flatlab/flatness.hpp"

namespace flatlab {

namespace {

constexpr std::uint64_t kInitTag = 0x696e6974ULL;
constexpr std::uint64_t kBatchTag = 0x6261746368ULL;
constexpr std::uint64_t kNoiseTag = 0x6e6f697365ULL;
constexpr std::uint64_t kEvalTag = 0x6576616cULL;
constexpr std::uint64_t kTargetTag = 0x746172676574ULL;
constexpr std::uint64_t kPretrainTag = 0x707265ULL;

std::vector<double> uniform_or(const std::vector<double>& beta, std::size_t k) {
    if (beta.empty()) {
        return std::vector<double>(k, 1.0 / static_cast<double>(k));
    }
    if (beta.size() != k) {
        throw Error(fmt::format("beta has {} entries, expected k = {}", beta.size(), k));
    }
    return beta;
}

}  // namespace

// ---------------------------------------------------------------------------

QuadraticEnsemble::QuadraticEnsemble(QuadraticSpec spec, EnsembleConfig cfg, std::size_t chains, std::uint64_t seed)
    : spec_(std::move(spec)), cfg_(std::move(cfg)), chains_(chains), dim_(0), rng_(seed) {
    spec_.validate();
    if (chains_ == 0) {
        throw Error("QuadraticEnsemble: at least one chain required");
    }
    if (cfg_.k == 0 || !(cfg_.eta > 0.0) || !(cfg_.alpha >= 0.0 && cfg_.alpha <= 1.0)) {
        throw Error("QuadraticEnsemble: eta > 0, alpha in [0, 1], k >= 1 required");
    }
    beta_ = uniform_or(cfg_.beta, cfg_.k);
    dim_ = spec_.dim();
    sgd_.resize(chains_ * dim_);
    for (std::size_t c = 0; c < chains_; ++c) {
        std::copy(spec_.center_mean.begin(), spec_.center_mean.end(), sgd_.begin() + static_cast<std::ptrdiff_t>(c * dim_));
    }
    la_ = sgd_;
    avg_ = sgd_;
}

void QuadraticEnsemble::outer_step() {
    const double eta = cfg_.eta;
    const double alpha = cfg_.alpha;
    const double keep = 1.0 - alpha;
    std::vector<double> sd(dim_);
    for (std::size_t i = 0; i < dim_; ++i) sd[i] = std::sqrt(spec_.sigma2[i]);
    std::vector<double> fast_la(dim_);
    std::vector<double> fast_avg(dim_);
    std::vector<double> acc(dim_);

    // Arithmetic mirrors inner_step / interpolate / weighted_average exactly so
    // a single chain reproduces the generic optimizer bit for bit.
    for (std::size_t c = 0; c < chains_; ++c) {
        double* w_sgd = &sgd_[c * dim_];
        double* w_la = &la_[c * dim_];
        double* w_avg = &avg_[c * dim_];
        std::copy(w_la, w_la + dim_, fast_la.begin());
        std::copy(w_avg, w_avg + dim_, fast_avg.begin());
        std::fill(acc.begin(), acc.end(), 0.0);
        for (std::size_t j = 0; j < cfg_.k; ++j) {
            for (std::size_t i = 0; i < dim_; ++i) {
                const double center = spec_.center_mean[i] + sd[i] * rng_.normal();
                const double h = spec_.h[i];
                w_sgd[i] -= eta * (h * (w_sgd[i] - center) + 0.0 * w_sgd[i]);
                fast_la[i] -= eta * (h * (fast_la[i] - center) + 0.0 * fast_la[i]);
                fast_avg[i] -= eta * (h * (fast_avg[i] - center) + 0.0 * fast_avg[i]);
                acc[i] += beta_[j] * fast_avg[i];
            }
        }
        for (std::size_t i = 0; i < dim_; ++i) {
            w_la[i] = keep * w_la[i] + alpha * fast_la[i];
            w_avg[i] = keep * w_avg[i] + alpha * acc[i];
        }
    }
}

VarianceEstimate monte_carlo_stationary_variance(const QuadraticSpec& spec, const EnsembleConfig& cfg,
                                                 const VarianceMcOptions& options) {
    if (options.chains < 2 || options.measured == 0) {
        throw Error("monte_carlo_stationary_variance: need >= 2 chains and >= 1 measured step");
    }
    QuadraticEnsemble ens(spec, cfg, options.chains, options.seed);
    for (std::size_t s = 0; s < options.burn_in; ++s) {
        ens.outer_step();
    }
    const std::size_t d = ens.dim();
    VarianceEstimate out{std::vector<double>(d), std::vector<double>(d), std::vector<double>(d)};
    const auto n = static_cast<double>(options.chains);
    auto variance = [&](auto get, std::size_t coord) {
        double mean = 0.0;
        for (std::size_t c = 0; c < options.chains; ++c) mean += get(c, coord);
        mean /= n;
        double ss = 0.0;
        for (std::size_t c = 0; c < options.chains; ++c) {
            const double dv = get(c, coord) - mean;
            ss += dv * dv;
        }
        return ss / (n - 1.0);
    };
    for (std::size_t s = 0; s < options.measured; ++s) {
        ens.outer_step();
        for (std::size_t i = 0; i < d; ++i) {
            out.sgd[i] += variance([&](std::size_t c, std::size_t j) { return ens.sgd(c, j); }, i);
            out.lookahead[i] += variance([&](std::size_t c, std::size_t j) { return ens.lookahead(c, j); }, i);
            out.avg_lookahead[i] +=
                variance([&](std::size_t c, std::size_t j) { return ens.avg_lookahead(c, j); }, i);
        }
    }
    const auto m = static_cast<double>(options.measured);
    for (std::size_t i = 0; i < d; ++i) {
        out.sgd[i] /= m;
        out.lookahead[i] /= m;
        out.avg_lookahead[i] /= m;
    }
    return out;
}

// ---------------------------------------------------------------------------

ChainOutcome simulate_sgd_chain(double eta, double h, double sigma2, double start, std::size_t steps, Rng& rng) {
    ChainOutcome out;
    const double sd = std::sqrt(sigma2);
    double w = start;
    for (std::size_t t = 0; t < steps; ++t) {
        const double center = sd * rng.normal();
        w -= eta * h * (w - center);
        out.steps_run = t + 1;
        out.max_abs = std::max(out.max_abs, std::abs(w));
        if (!std::isfinite(w) || std::abs(w) > kDivergenceBound) {
            out.diverged = true;
            break;
        }
    }
    return out;
}

ChainOutcome simulate_lookahead_chain(double eta, double h, double sigma2, double alpha, std::size_t k, double start,
                                      std::size_t outer_steps, Rng& rng) {
    ChainOutcome out;
    const double sd = std::sqrt(sigma2);
    double slow = start;
    for (std::size_t t = 0; t < outer_steps; ++t) {
        double fast = slow;
        for (std::size_t j = 0; j < k; ++j) {
            const double center = sd * rng.normal();
            fast -= eta * h * (fast - center);
            out.max_abs = std::max(out.max_abs, std::abs(fast));
            if (!std::isfinite(fast) || std::abs(fast) > kDivergenceBound) {
                out.diverged = true;
                out.steps_run = t + 1;
                return out;
            }
        }
        slow = (1.0 - alpha) * slow + alpha * fast;
        out.steps_run = t + 1;
        out.max_abs = std::max(out.max_abs, std::abs(slow));
        if (!std::isfinite(slow) || std::abs(slow) > kDivergenceBound) {
            out.diverged = true;
            break;
        }
    }
    return out;
}

std::vector<double> midpoint_grid(double lo, double hi, std::size_t n) {
    if (n == 0 || !(hi > lo)) {
        throw Error("midpoint_grid: n >= 1 and hi > lo required");
    }
    std::vector<double> out(n);
    for (std::size_t i = 0; i < n; ++i) {
        out[i] = lo + (hi - lo) * (static_cast<double>(i) + 0.5) / static_cast<double>(n);
    }
    return out;
}

std::vector<StabilityRow> stability_map(const StabilityMapOptions& options) {
    if (options.alphas.empty() || options.k == 0) {
        throw Error("stability_map: alphas nonempty and k >= 1 required");
    }
    std::vector<StabilityRow> rows;
    const auto hs = midpoint_grid(options.h_min, options.h_max, options.n_h);
    for (std::size_t a = 0; a < options.alphas.size(); ++a) {
        const double alpha = options.alphas[a];
        for (std::size_t i = 0; i < hs.size(); ++i) {
            theory::ScalarChainSpec spec;
            spec.eta = options.eta;
            spec.h = hs[i];
            spec.sigma2 = options.sigma2;
            spec.alpha = alpha;
            spec.k = options.k;
            StabilityRow row;
            row.alpha = alpha;
            row.h = hs[i];
            row.sgd_stable = theory::sgd_stable(options.eta, hs[i]);
            row.paper_threshold_ok = hs[i] < theory::lookahead_paper_threshold(options.eta, alpha, options.k);
            row.exact_stable = theory::lookahead_mean_stable(spec);
            Rng la_rng(derive_seed(options.seed, (a << 32) | i));
            row.mc_diverged = simulate_lookahead_chain(options.eta, hs[i], options.sigma2, alpha, options.k,
                                                       options.start, options.steps, la_rng)
                                  .diverged;
            Rng sgd_rng(derive_seed(options.seed, (a << 32) | i | (1ULL << 63)));
            row.sgd_mc_diverged =
                simulate_sgd_chain(options.eta, hs[i], options.sigma2, options.start, options.steps, sgd_rng).diverged;
            rows.push_back(row);
        }
    }
    return rows;
}

// ---------------------------------------------------------------------------

void OptimizerSpec::validate() const {
    switch (kind) {
        case OptimizerKind::erm:
            inner.validate();
            break;
        case OptimizerKind::lookahead:
            lookahead.validate();
            break;
        case OptimizerKind::sam:
            SamConfig{rho, inner}.validate();
            break;
        case OptimizerKind::swa:
            inner.validate();
            if (swa_every == 0) {
                throw Error("swa_every must be positive");
            }
            break;
    }
}

TrainResult train(const OptimizerSpec& spec, StochasticObjective& objective, const ParamVec& initial,
                  const TrainOptions& options) {
    spec.validate();
    TrainResult result{initial, initial, {}, {}, false, {}, 0.0};
    OptimizerState state(initial);
    Rng noise_rng(derive_seed(options.noise_seed, kNoiseTag));
    const std::size_t outer_total =
        spec.kind == OptimizerKind::lookahead ? options.gradient_steps / spec.lookahead.k : options.gradient_steps;

    auto maybe_checkpoint = [&] {
        if (options.checkpoint_every > 0 && state.outer_steps % options.checkpoint_every == 0) {
            result.checkpoints.emplace_back(state.outer_steps, state.weights);
        }
    };

    try {
        for (std::size_t step = 0; step < outer_total; ++step) {
            switch (spec.kind) {
                case OptimizerKind::erm:
                    erm_step(state, spec.inner, objective, &result.trajectory);
                    break;
                case OptimizerKind::lookahead: {
                    const auto report =
                        lookahead_outer_step(state, spec.lookahead, objective, noise_rng, &result.trajectory);
                    result.max_entropy_form_gap = std::max(result.max_entropy_form_gap, report.entropy_form_gap);
                    break;
                }
                case OptimizerKind::sam:
                    sam_step(state, SamConfig{spec.rho, spec.inner}, objective, &result.trajectory);
                    break;
                case OptimizerKind::swa:
                    erm_step(state, spec.inner, objective, &result.trajectory);
                    if (step + 1 > spec.swa_start && (step + 1 - spec.swa_start) % spec.swa_every == 0) {
                        swa_update(state, state.weights);
                    }
                    break;
            }
            maybe_checkpoint();
        }
    } catch (const DivergenceError& e) {
        result.diverged = true;
        result.divergence = e.what();
    }
    result.final_weights = spec.kind == OptimizerKind::swa && state.swa ? state.swa->mean : state.weights;
    return result;
}

// ---------------------------------------------------------------------------

void DomainTask::validate() const {
    mlp.validate();
    if (mlp.layer_sizes.front() != 2) {
        throw Error("domain task: input width must be 2");
    }
    if (source_angles.empty() || target_angles.empty()) {
        throw Error("domain task: source and target angles must be nonempty");
    }
    if (batch_size == 0 || batch_size > n_per_domain * source_angles.size()) {
        throw Error("domain task: batch_size must be in [1, source pool size]");
    }
}

DomainDataset concat_datasets(std::span<const DomainDataset> parts) {
    if (parts.empty()) {
        throw Error("concat_datasets: no parts");
    }
    Eigen::Index rows = 0;
    for (const auto& p : parts) {
        if (p.inputs.cols() != parts.front().inputs.cols() || p.n_classes != parts.front().n_classes) {
            throw Error("concat_datasets: incompatible parts");
        }
        rows += p.inputs.rows();
    }
    DomainDataset out;
    out.n_classes = parts.front().n_classes;
    out.domain_param = parts.front().domain_param;
    out.inputs.resize(rows, parts.front().inputs.cols());
    Eigen::Index at = 0;
    for (const auto& p : parts) {
        out.inputs.middleRows(at, p.inputs.rows()) = p.inputs;
        out.labels.insert(out.labels.end(), p.labels.begin(), p.labels.end());
        at += p.inputs.rows();
    }
    return out;
}

namespace {

DomainDataset domains_for(std::uint64_t base_seed, const std::vector<double>& angles, std::size_t n, int classes) {
    std::vector<DomainDataset> parts;
    for (double a : angles) {
        parts.push_back(make_rotated_domain(base_seed, a, n, classes));
    }
    return concat_datasets(parts);
}

}  // namespace

DomainData make_domain_data(const DomainTask& task) {
    task.validate();
    const int classes = static_cast<int>(task.mlp.num_classes());
    return DomainData{
        domains_for(task.data_seed, task.source_angles, task.n_per_domain, classes),
        domains_for(derive_seed(task.data_seed, kEvalTag), task.source_angles, task.n_per_domain, classes),
        domains_for(derive_seed(task.data_seed, kTargetTag), task.target_angles, task.n_per_domain, classes),
    };
}

MlpSpec seeded_mlp(const DomainTask& task, std::uint64_t seed) {
    MlpSpec spec = task.mlp;
    spec.init_seed = derive_seed(seed, kInitTag);
    return spec;
}

std::vector<DiversityRow> diversity_experiment(const DomainTask& task, const DomainData& data,
                                               const DiversityOptions& options, std::uint64_t seed) {
    if (!(options.eta_multiplier > 0.0) || options.k == 0) {
        throw Error("diversity: eta_multiplier > 0 and k >= 1 required");
    }
    const MlpSpec mlp = seeded_mlp(task, seed);
    ParamVec init = mlp_init(mlp);
    if (options.pretrain_steps > 0) {
        OptimizerSpec pre;
        pre.name = "pretrain";
        pre.inner = options.pretrain;
        MlpObjective objective(mlp, data.source, task.batch_size, derive_seed(seed, kPretrainTag));
        TrainResult run = train(pre, objective, init, TrainOptions{options.pretrain_steps, seed, 0});
        if (run.diverged) throw Error("diversity: pretraining diverged");
        init = std::move(run.final_weights);
    }
    const Eigen::MatrixXd feat_in0 = mlp_forward(mlp, init, data.source_eval.inputs).penultimate;
    const Eigen::MatrixXd feat_out0 = mlp_forward(mlp, init, data.target.inputs).penultimate;
    const auto pred_in0 = mlp_predict(mlp, init, data.source_eval.inputs);
    const auto pred_out0 = mlp_predict(mlp, init, data.target.inputs);

    std::vector<DiversityRow> rows;
    for (const double eta : {options.inner.eta, options.inner.eta * options.eta_multiplier}) {
        OptimizerSpec spec;
        spec.name = "erm";
        spec.inner = options.inner;
        spec.inner.eta = eta;
        // Same batch seed for both learning rates: identical streams.
        MlpObjective objective(mlp, data.source, task.batch_size, derive_seed(seed, kBatchTag));
        const TrainResult run = train(spec, objective, init, TrainOptions{options.k, seed, 0});
        const ParamVec& w = run.final_weights;
        DiversityRow row;
        row.seed = seed;
        row.eta = eta;
        row.cka_in = linear_cka(feat_in0, mlp_forward(mlp, w, data.source_eval.inputs).penultimate);
        row.cka_out = linear_cka(feat_out0, mlp_forward(mlp, w, data.target.inputs).penultimate);
        row.pred_div_in = prediction_diversity(pred_in0, mlp_predict(mlp, w, data.source_eval.inputs));
        row.pred_div_out = prediction_diversity(pred_out0, mlp_predict(mlp, w, data.target.inputs));
        rows.push_back(row);
    }
    return rows;
}

SharpnessResult train_and_measure_sharpness(const DomainTask& task, const DomainData& data, const OptimizerSpec& spec,
                                            std::uint64_t seed, std::size_t gradient_steps, std::size_t power_iters,
                                            double power_tol) {
    const MlpSpec mlp = seeded_mlp(task, seed);
    MlpObjective objective(mlp, data.source, task.batch_size, derive_seed(seed, kBatchTag));
    const TrainResult run = train(spec, objective, mlp_init(mlp), TrainOptions{gradient_steps, seed, 0});
    SharpnessResult out;
    out.diverged = run.diverged;
    out.weights = run.final_weights;
    out.final_loss = mlp_full_loss(mlp, data.source)(run.final_weights);
    out.source_accuracy = mlp_accuracy(mlp, run.final_weights, data.source_eval);
    out.target_accuracy = mlp_accuracy(mlp, run.final_weights, data.target);
    if (!run.diverged) {
        PowerIterationOptions po;
        po.max_iters = power_iters;
        po.tol = power_tol;
        po.seed = derive_seed(seed, 0x706f776572ULL);
        const auto report = power_iteration_lambda_max(mlp_full_grad(mlp, data.source), run.final_weights, po);
        out.lambda_max = report.lambda_max;
        out.converged = report.converged;
    }
    return out;
}

// ---------------------------------------------------------------------------

double entropy_fd_rel_error(const theory::EntropyQuery& q, double step) {
    const auto grad = theory::entropy_grad(q);
    double err = 0.0;
    double norm = 0.0;
    for (std::size_t i = 0; i < grad.size(); ++i) {
        theory::EntropyQuery plus = q;
        theory::EntropyQuery minus = q;
        plus.theta[i] += step;
        minus.theta[i] -= step;
        const double fd = (theory::entropy_value(plus) - theory::entropy_value(minus)) / (2.0 * step);
        err += (fd - grad[i]) * (fd - grad[i]);
        norm += grad[i] * grad[i];
    }
    return std::sqrt(err) / std::max(std::sqrt(norm), 1e-300);
}

EntropyFixedPoint entropy_fixed_point(theory::EntropyQuery q, double step_size, double tol, std::size_t max_iters) {
    if (!(step_size > 0.0 && step_size <= 1.0)) {
        throw Error("entropy_fixed_point: step size must be in (0, 1]");
    }
    EntropyFixedPoint out;
    for (std::size_t it = 0; it <= max_iters; ++it) {
        const auto grad = theory::entropy_grad(q);
        double n2 = 0.0;
        for (double g : grad) n2 += g * g;
        out.grad_norm = std::sqrt(n2);
        out.iterations = it;
        if (out.grad_norm < tol) {
            break;
        }
        const auto mean = theory::entropy_gibbs_mean(q);
        for (std::size_t i = 0; i < q.theta.size(); ++i) {
            q.theta[i] = (1.0 - step_size) * q.theta[i] + step_size * mean[i];
        }
    }
    out.theta = q.theta;
    return out;
}

std::vector<EntropyCheckRow> entropy_check(const EntropyCheckOptions& options) {
    if (options.dim == 0 || options.sampler_steps < 2) {
        throw Error("entropy_check: dim >= 1 and sampler_steps >= 2 required");
    }
    std::vector<EntropyCheckRow> rows;
    for (std::size_t qi = 0; qi < options.n_queries; ++qi) {
        Rng rng(derive_seed(options.seed, qi));
        theory::EntropyQuery q;
        q.gamma = std::exp(rng.uniform(std::log(0.1), std::log(10.0)));
        for (std::size_t i = 0; i < options.dim; ++i) {
            q.h.push_back(rng.uniform(0.1, 10.0));
            q.c.push_back(rng.normal());
            q.theta.push_back(2.0 * rng.normal());
        }
        EntropyCheckRow row;
        row.query = qi;
        row.gamma = q.gamma;
        row.fd_rel_err = entropy_fd_rel_error(q);
        const auto fp = entropy_fixed_point(q, options.step_size);
        row.fixed_point_grad = fp.grad_norm;
        row.fixed_point_iters = fp.iterations;

        // Unadjusted Langevin on L(x) + gamma/2 |theta - x|^2; its stationary
        // mean is exact for quadratics. Error in units of the Gibbs std.
        const auto gibbs = theory::entropy_gibbs_mean(q);
        std::vector<double> x = q.theta;
        std::vector<double> sum(options.dim, 0.0);
        const std::size_t burn = options.sampler_steps / 10;
        for (std::size_t t = 0; t < options.sampler_steps; ++t) {
            for (std::size_t i = 0; i < options.dim; ++i) {
                const double drift = q.h[i] * (x[i] - q.c[i]) + q.gamma * (x[i] - q.theta[i]);
                x[i] += -options.sampler_eta * drift + std::sqrt(2.0 * options.sampler_eta) * rng.normal();
                if (t >= burn) sum[i] += x[i];
            }
        }
        const auto n = static_cast<double>(options.sampler_steps - burn);
        for (std::size_t i = 0; i < options.dim; ++i) {
            const double sd = 1.0 / std::sqrt(q.h[i] + q.gamma);
            row.sampler_mean_err = std::max(row.sampler_mean_err, std::abs(sum[i] / n - gibbs[i]) / sd);
        }
        rows.push_back(row);
    }
    return rows;
}

// ---------------------------------------------------------------------------

double quantile(std::vector<double> values, double q) {
    if (values.empty()) {
        throw Error("quantile: empty sample");
    }
    if (!(q >= 0.0 && q <= 1.0)) {
        throw Error("quantile: q must be in [0, 1]");
    }
    std::sort(values.begin(), values.end());
    const double pos = q * static_cast<double>(values.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, values.size() - 1);
    const double frac = pos - static_cast<double>(lo);
    return values[lo] + frac * (values[hi] - values[lo]);
}

double median(std::vector<double> values) { return quantile(std::move(values), 0.5); }

}  // namespace flatlab
