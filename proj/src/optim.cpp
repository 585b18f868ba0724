#include "flatlab/optim.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>

#include <fmt/format.h>

#include "flatlab/csv.hpp"
#include "flatlab/error.hpp"

namespace flatlab {

void InnerOptConfig::validate() const {
    if (!(eta > 0.0) || !std::isfinite(eta)) {
        throw Error("inner optimizer: eta must be positive");
    }
    if (!(momentum >= 0.0 && momentum < 1.0)) {
        throw Error("inner optimizer: momentum must be in [0, 1)");
    }
    if (!(weight_decay >= 0.0)) {
        throw Error("inner optimizer: weight_decay must be non-negative");
    }
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
        throw Error("inner optimizer: adam betas must be in [0, 1)");
    }
    if (!(eps > 0.0)) {
        throw Error("inner optimizer: eps must be positive");
    }
}

void inner_step(InnerOptState& state, const InnerOptConfig& cfg, ParamVec& weights, const ParamVec& grad) {
    require_same_layout(weights, grad, "inner_step");
    grad.ensure_finite("inner_step: gradient");
    const std::size_t n = weights.size();

    if (cfg.kind == InnerKind::sgd) {
        if (cfg.momentum == 0.0) {
            for (std::size_t i = 0; i < n; ++i) {
                weights[i] -= cfg.eta * (grad[i] + cfg.weight_decay * weights[i]);
            }
            return;
        }
        if (!state.momentum) {
            state.momentum.emplace(weights.layout_ptr());
            for (std::size_t i = 0; i < n; ++i) {
                (*state.momentum)[i] = grad[i] + cfg.weight_decay * weights[i];
            }
        } else {
            for (std::size_t i = 0; i < n; ++i) {
                (*state.momentum)[i] = cfg.momentum * (*state.momentum)[i] + grad[i] + cfg.weight_decay * weights[i];
            }
        }
        for (std::size_t i = 0; i < n; ++i) {
            weights[i] -= cfg.eta * (*state.momentum)[i];
        }
        return;
    }

    if (!state.adam_m) {
        state.adam_m.emplace(weights.layout_ptr());
        state.adam_v.emplace(weights.layout_ptr());
        state.adam_t = 0;
    }
    ++state.adam_t;
    auto& m = *state.adam_m;
    auto& v = *state.adam_v;
    const double t = static_cast<double>(state.adam_t);
    const double c1 = 1.0 - std::pow(cfg.beta1, t);
    const double c2 = 1.0 - std::pow(cfg.beta2, t);
    for (std::size_t i = 0; i < n; ++i) {
        const double g = grad[i] + cfg.weight_decay * weights[i];
        m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
        v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
        const double m_hat = m[i] / c1;
        const double v_hat = v[i] / c2;
        weights[i] -= cfg.eta * m_hat / (std::sqrt(v_hat) + cfg.eps);
    }
}

void LookaheadConfig::validate() const {
    inner.validate();
    if (!(alpha >= 0.0 && alpha <= 1.0)) {
        throw Error("lookahead: alpha must be in [0, 1]");
    }
    if (k == 0) {
        throw Error("lookahead: k must be positive");
    }
    if (!beta.empty()) {
        if (beta.size() != k) {
            throw Error(fmt::format("lookahead: beta has {} entries, expected k = {}", beta.size(), k));
        }
        double sum = 0.0;
        for (double b : beta) {
            if (!(b >= 0.0)) {
                throw Error("lookahead: beta entries must be non-negative");
            }
            sum += b;
        }
        if (std::abs(sum - 1.0) > 1e-12) {
            throw Error(fmt::format("lookahead: beta sums to {:.17g}, expected 1", sum));
        }
    }
    if (!(lambda >= 0.0)) {
        throw Error("lookahead: lambda must be non-negative");
    }
    if (history_window == 0) {
        throw Error("lookahead: history_window must be positive");
    }
    if (!(noise_strength >= 0.0)) {
        throw Error("lookahead: noise_strength must be non-negative");
    }
}

std::vector<double> LookaheadConfig::averaging_weights() const {
    if (!beta.empty()) {
        return beta;
    }
    return std::vector<double>(k, 1.0 / static_cast<double>(k));
}

void SamConfig::validate() const {
    inner.validate();
    if (!(rho > 0.0)) {
        throw Error("sam: rho must be positive");
    }
}

void check_divergence(const ParamVec& weights, std::size_t outer_step, std::size_t inner_step) {
    for (std::size_t i = 0; i < weights.size(); ++i) {
        const double w = weights[i];
        if (!std::isfinite(w) || std::abs(w) > kDivergenceBound) {
            throw DivergenceError(outer_step, inner_step,
                                  fmt::format("diverged at outer step {}, inner step {}: |w[{}]| = {}", outer_step,
                                              inner_step, i, w));
        }
    }
}

namespace {

ParamVec history_mean(const std::deque<ParamVec>& history) {
    const std::vector<ParamVec> snapshots(history.begin(), history.end());
    const std::vector<double> weights(snapshots.size(), 1.0 / static_cast<double>(snapshots.size()));
    return weighted_average(snapshots, weights);
}

}  // namespace

OuterStepReport lookahead_outer_step(OptimizerState& state, const LookaheadConfig& cfg,
                                     StochasticObjective& objective, Rng& noise_rng, Trajectory* trajectory) {
    const std::size_t outer = state.outer_steps;
    const bool use_reg = cfg.variant == LookaheadVariant::reg;
    const bool use_avg = cfg.variant == LookaheadVariant::avg;

    if (use_reg && state.reg_history.empty()) {
        state.reg_history.push_back(state.weights);
    }
    const std::optional<ParamVec> anchor =
        use_reg ? std::optional<ParamVec>(history_mean(state.reg_history)) : std::nullopt;

    ParamVec fast = state.weights;
    std::vector<ParamVec> snapshots;
    if (use_avg) {
        snapshots.reserve(cfg.k);
    }

    for (std::size_t j = 0; j < cfg.k; ++j) {
        if (!objective.next_batch()) {
            throw Error(fmt::format("lookahead: batch stream exhausted after {} of {} inner steps (outer step {})", j,
                                    cfg.k, outer));
        }
        LossGrad lg = objective.loss_grad(fast);
        const double grad_norm = l2_norm(lg.grad);
        if (use_reg) {
            // d/dw lambda |w - anchor|^2
            for (std::size_t i = 0; i < fast.size(); ++i) {
                lg.grad[i] += 2.0 * cfg.lambda * (fast[i] - (*anchor)[i]);
            }
        }
        inner_step(state.inner, cfg.inner, fast, lg.grad);
        if (cfg.noise_strength > 0.0) {
            const ParamVec noise = filterwise_normalize(sample_uniform_direction(noise_rng, fast.layout_ptr()), fast);
            axpy(cfg.noise_strength, noise, fast);
        }
        check_divergence(fast, outer, j);
        ++state.inner_steps;
        if (trajectory) {
            trajectory->rows.push_back({outer, j, lg.loss, grad_norm, l2_norm(fast)});
        }
        if (use_avg) {
            snapshots.push_back(fast);
        }
    }

    OuterStepReport report;
    if (use_avg) {
        const auto beta = cfg.averaging_weights();
        const ParamVec mean = weighted_average(snapshots, beta);
        ParamVec next = interpolate(state.weights, mean, cfg.alpha);
        // Local-entropy form: theta - gamma (theta - E[theta']).
        for (std::size_t i = 0; i < next.size(); ++i) {
            const double entropy_form = state.weights[i] - cfg.alpha * (state.weights[i] - mean[i]);
            report.entropy_form_gap = std::max(report.entropy_form_gap, std::abs(next[i] - entropy_form));
        }
        state.weights = std::move(next);
    } else {
        state.weights = interpolate(state.weights, fast, cfg.alpha);
    }
    check_divergence(state.weights, outer, cfg.k);

    if (use_reg) {
        state.reg_history.push_back(state.weights);
        while (state.reg_history.size() > cfg.history_window) {
            state.reg_history.pop_front();
        }
    }
    ++state.outer_steps;
    return report;
}

void erm_step(OptimizerState& state, const InnerOptConfig& cfg, StochasticObjective& objective,
              Trajectory* trajectory) {
    const std::size_t step = state.outer_steps;
    if (!objective.next_batch()) {
        throw Error(fmt::format("erm: batch stream exhausted at step {}", step));
    }
    const LossGrad lg = objective.loss_grad(state.weights);
    const double grad_norm = l2_norm(lg.grad);
    inner_step(state.inner, cfg, state.weights, lg.grad);
    check_divergence(state.weights, step, 0);
    ++state.inner_steps;
    ++state.outer_steps;
    if (trajectory) {
        trajectory->rows.push_back({step, 0, lg.loss, grad_norm, l2_norm(state.weights)});
    }
}

void sam_step(OptimizerState& state, const SamConfig& cfg, StochasticObjective& objective, Trajectory* trajectory) {
    const std::size_t step = state.outer_steps;
    if (!objective.next_batch()) {
        throw Error(fmt::format("sam: batch stream exhausted at step {}", step));
    }
    const LossGrad lg = objective.loss_grad(state.weights);
    const double grad_norm = l2_norm(lg.grad);
    if (grad_norm == 0.0) {
        throw Error(fmt::format("sam: zero gradient at step {}, ascent direction undefined", step));
    }
    ParamVec ascended = state.weights;
    axpy(cfg.rho / grad_norm, lg.grad, ascended);
    const LossGrad sharp = objective.loss_grad(ascended);
    inner_step(state.inner, cfg.inner, state.weights, sharp.grad);
    check_divergence(state.weights, step, 0);
    ++state.inner_steps;
    ++state.outer_steps;
    if (trajectory) {
        trajectory->rows.push_back({step, 0, lg.loss, grad_norm, l2_norm(state.weights)});
    }
}

void swa_update(OptimizerState& state, const ParamVec& weights) {
    if (!state.swa) {
        state.swa = RunningAverage{ParamVec(weights.layout_ptr()), 0};
    }
    state.swa = running_average_update(state.swa->mean, state.swa->count, weights);
}

void write_trajectory_csv(std::ostream& out, const Trajectory& trajectory) {
    CsvWriter csv(out, {"outer_step", "inner_step", "loss", "grad_norm", "weight_norm"});
    for (const auto& r : trajectory.rows) {
        csv.row(r.outer_step, r.inner_step, r.loss, r.grad_norm, r.weight_norm);
    }
}

std::string_view to_string(InnerKind kind) noexcept { return kind == InnerKind::sgd ? "sgd" : "adam"; }

std::string_view to_string(LookaheadVariant variant) noexcept {
    switch (variant) {
        case LookaheadVariant::plain: return "plain";
        case LookaheadVariant::avg: return "avg";
        case LookaheadVariant::reg: return "reg";
    }
    return "plain";
}

}  // namespace flatlab
