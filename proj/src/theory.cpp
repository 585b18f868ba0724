#include "flatlab/theory.hpp"

#include <cmath>
#include <numbers>

#include <Eigen/Dense>
#include <fmt/format.h>

#include "flatlab/error.hpp"

namespace flatlab::theory {

void ScalarChainSpec::validate() const {
    if (!(eta > 0.0) || !(h >= 0.0) || !(sigma2 >= 0.0)) {
        throw Error("ScalarChainSpec: eta > 0, h >= 0, sigma2 >= 0 required");
    }
    if (!(alpha > 0.0 && alpha <= 1.0)) {
        throw Error("ScalarChainSpec: alpha must be in (0, 1]");
    }
    if (k == 0) {
        throw Error("ScalarChainSpec: k must be positive");
    }
    if (!beta.empty()) {
        if (beta.size() != k) {
            throw Error("ScalarChainSpec: beta must have k entries");
        }
        double sum = 0.0;
        for (double b : beta) sum += b;
        if (std::abs(sum - 1.0) > 1e-12) {
            throw Error(fmt::format("ScalarChainSpec: beta sums to {:.17g}, expected 1", sum));
        }
    }
}

std::vector<double> ScalarChainSpec::weights() const {
    return beta.empty() ? std::vector<double>(k, 1.0 / static_cast<double>(k)) : beta;
}

std::size_t ScalarChainSpec::iterate_index(std::size_t n) const noexcept {
    return index_convention == IndexConvention::include_start ? n : n + 1;
}

bool sgd_stable(double eta, double h) { return h < 2.0 / eta; }

double lookahead_paper_threshold(double eta, double alpha, std::size_t k) {
    return (1.0 / eta) * std::pow(1.0 / alpha, 1.0 / static_cast<double>(k)) + 1.0 / eta;
}

double lookahead_mean_map_factor(const ScalarChainSpec& spec) {
    return (1.0 - spec.alpha) + spec.alpha * std::pow(spec.contraction(), static_cast<double>(spec.k));
}

double avg_mean_map_factor(const ScalarChainSpec& spec) {
    const auto beta = spec.weights();
    const double m = spec.contraction();
    double s = 0.0;
    for (std::size_t n = 0; n < beta.size(); ++n) {
        s += beta[n] * std::pow(m, static_cast<double>(spec.iterate_index(n)));
    }
    return (1.0 - spec.alpha) + spec.alpha * s;
}

bool lookahead_mean_stable(const ScalarChainSpec& spec) { return std::abs(lookahead_mean_map_factor(spec)) < 1.0; }

double v_star_erm(double eta, double h, double sigma2) {
    if (!sgd_stable(eta, h) || !(h > 0.0)) {
        throw Error(fmt::format("v_star_erm: SGD unstable for eta = {}, h = {} (no stationary variance)", eta, h));
    }
    const double m = 1.0 - eta * h;
    return eta * eta * h * h * sigma2 / (1.0 - m * m);
}

double v_star_lookahead(const ScalarChainSpec& spec) {
    spec.validate();
    if (!lookahead_mean_stable(spec)) {
        throw Error("v_star_lookahead: mean map does not contract (no stationary variance)");
    }
    const double a = spec.alpha;
    const double m = spec.contraction();
    const double mk = std::pow(m, static_cast<double>(spec.k));
    const double m2k = mk * mk;
    const double ratio = a * a * (1.0 - m2k) / (a * a * (1.0 - m2k) + 2.0 * a * (1.0 - a) * (1.0 - mk));
    return ratio * v_star_erm(spec.eta, spec.h, spec.sigma2);
}

double v_star_avglookahead(const ScalarChainSpec& spec) {
    spec.validate();
    const auto beta = spec.weights();
    const double m = spec.contraction();
    const double factor = avg_mean_map_factor(spec);
    const double noise = v_star_erm(spec.eta, spec.h, spec.sigma2);
    double y = 0.0;
    for (std::size_t n = 0; n < beta.size(); ++n) {
        const auto i = static_cast<double>(spec.iterate_index(n));
        y += beta[n] * beta[n] * (1.0 - std::pow(m, 2.0 * i));
        for (std::size_t p = 0; p < n; ++p) {
            const auto j = static_cast<double>(spec.iterate_index(p));
            y += 2.0 * beta[n] * beta[p] * std::pow(m, i - j) * (1.0 - std::pow(m, 2.0 * j));
        }
    }
    if (y == 0.0) {
        // Only the start weight is averaged (include_start, k = 1): the update is a no-op.
        return 0.0;
    }
    if (!(std::abs(factor) < 1.0)) {
        throw Error("v_star_avglookahead: mean map does not contract (no stationary variance)");
    }
    return spec.alpha * spec.alpha * y / (1.0 - factor * factor) * noise;
}

namespace {

// Variance of the next slow weight given Var(slow) = v, from the joint
// covariance of (slow, x_0 .. x_k) where x_0 = slow and x_i = M x_{i-1} + eta h c_i.
double propagate_once(const ScalarChainSpec& spec, OuterRule rule, double v) {
    const std::size_t k = spec.k;
    const double m = spec.contraction();
    const double q = spec.eta * spec.eta * spec.h * spec.h * spec.sigma2;

    // Index 0 holds the slow weight, 1 + i holds x_i.
    const auto dim = static_cast<Eigen::Index>(k + 2);
    Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(dim, dim);
    cov(0, 0) = v;
    cov(0, 1) = cov(1, 0) = v;
    cov(1, 1) = v;
    for (std::size_t i = 1; i <= k; ++i) {
        const auto cur = static_cast<Eigen::Index>(i + 1);
        for (Eigen::Index j = 0; j < cur; ++j) {
            cov(cur, j) = cov(j, cur) = m * cov(cur - 1, j);
        }
        cov(cur, cur) = m * m * cov(cur - 1, cur - 1) + q;
    }

    Eigen::VectorXd w = Eigen::VectorXd::Zero(dim);
    w(0) = 1.0 - spec.alpha;
    if (rule == OuterRule::plain) {
        w(static_cast<Eigen::Index>(k + 1)) += spec.alpha;
    } else {
        const auto beta = spec.weights();
        for (std::size_t n = 0; n < beta.size(); ++n) {
            w(static_cast<Eigen::Index>(spec.iterate_index(n) + 1)) += spec.alpha * beta[n];
        }
    }
    return w.dot(cov * w);
}

}  // namespace

double generic_stationary_variance(const ScalarChainSpec& spec, OuterRule rule) {
    spec.validate();
    // The outer variance map is affine: V' = a V + b.
    const double b = propagate_once(spec, rule, 0.0);
    const double a = propagate_once(spec, rule, 1.0) - b;
    if (b == 0.0) {
        return 0.0;
    }
    if (!(std::abs(a) < 1.0)) {
        throw Error("generic_stationary_variance: composed map does not contract");
    }
    // Iterate V_{n+1} = a V_n + b from V_0 = 0, doubling the number of applied
    // steps each round: (a, b) -> (a^2, a b + b).
    double power = a;
    double acc = b;
    double v = b;
    constexpr int kMaxRounds = 64;  // 2^64 steps, far beyond 1e6
    for (int round = 0; round < kMaxRounds; ++round) {
        const double next = power * acc + acc;
        power *= power;
        acc = next;
        const double change = std::abs(acc - v);
        v = acc;
        if (change < 1e-14 && std::abs(power) < 1e-14) {
            return v;
        }
    }
    throw Error("generic_stationary_variance: no convergence");
}

// ---------------------------------------------------------------------------

void EntropyQuery::validate() const {
    if (!(gamma > 0.0)) {
        throw Error("EntropyQuery: gamma must be positive");
    }
    if (h.size() != c.size() || h.size() != theta.size() || h.empty()) {
        throw Error("EntropyQuery: h, c and theta must have equal, non-zero length");
    }
    for (double v : h) {
        if (!(v > 0.0)) {
            throw Error("EntropyQuery: h entries must be positive");
        }
    }
}

std::vector<double> entropy_gibbs_mean(const EntropyQuery& q) {
    q.validate();
    std::vector<double> mean(q.h.size());
    for (std::size_t i = 0; i < mean.size(); ++i) {
        mean[i] = (q.h[i] * q.c[i] + q.gamma * q.theta[i]) / (q.h[i] + q.gamma);
    }
    return mean;
}

double entropy_value(const EntropyQuery& q) {
    q.validate();
    double f = 0.0;
    for (std::size_t i = 0; i < q.h.size(); ++i) {
        const double s = q.h[i] + q.gamma;
        const double d = q.theta[i] - q.c[i];
        f += -0.5 * (q.h[i] * q.gamma / s) * d * d + 0.5 * std::log(2.0 * std::numbers::pi / s);
    }
    return f;
}

std::vector<double> entropy_grad(const EntropyQuery& q) {
    auto mean = entropy_gibbs_mean(q);
    for (std::size_t i = 0; i < mean.size(); ++i) {
        mean[i] = q.gamma * (mean[i] - q.theta[i]);
    }
    return mean;
}

}  // namespace flatlab::theory
