#pragma once

#include <cstddef>
#include <vector>

namespace flatlab::theory {

/// Which inner iterates the averaging step sees: theta^0..theta^{k-1}
/// (include_start) or the post-step snapshots theta^1..theta^k (post_step,
/// what the optimizer implements).
enum class IndexConvention { include_start, post_step };

/// One decoupled coordinate of the diagonal noisy quadratic under Lookahead.
struct ScalarChainSpec {
    double eta = 0.1;
    double h = 1.0;
    double sigma2 = 1.0;
    double alpha = 0.05;
    std::size_t k = 15;
    std::vector<double> beta;  // empty means uniform 1/k
    IndexConvention index_convention = IndexConvention::post_step;

    void validate() const;
    [[nodiscard]] std::vector<double> weights() const;
    /// Inner-iterate index paired with weights()[n].
    [[nodiscard]] std::size_t iterate_index(std::size_t n) const noexcept;
    /// M = 1 - eta h.
    [[nodiscard]] double contraction() const noexcept { return 1.0 - eta * h; }
};

/// h < 2 / eta (strict), i.e. |1 - eta h| < 1.
[[nodiscard]] bool sgd_stable(double eta, double h);

/// (1/eta)(1/alpha)^{1/k} + 1/eta: the Lookahead upper bound on h.
[[nodiscard]] double lookahead_paper_threshold(double eta, double alpha, std::size_t k);

/// (1 - alpha) + alpha (1 - eta h)^k. The slow-weight mean contracts iff |factor| < 1.
[[nodiscard]] double lookahead_mean_map_factor(const ScalarChainSpec& spec);

/// (1 - alpha) + alpha sum_n beta_n M^{i_n} for the averaging variant.
[[nodiscard]] double avg_mean_map_factor(const ScalarChainSpec& spec);

[[nodiscard]] bool lookahead_mean_stable(const ScalarChainSpec& spec);

/// eta^2 h^2 sigma2 / (1 - M^2). Throws when SGD is unstable.
[[nodiscard]] double v_star_erm(double eta, double h, double sigma2);

/// alpha^2 (1 - M^{2k}) / (alpha^2 (1 - M^{2k}) + 2 alpha (1 - alpha)(1 - M^k)) * V*_ERM.
[[nodiscard]] double v_star_lookahead(const ScalarChainSpec& spec);

/// alpha^2 Y / (1 - [(1 - alpha) + alpha sum beta_i M^i]^2) * eta^2 h^2 sigma2 / (1 - M^2),
/// Y = sum beta_i^2 (1 - M^{2i}) + 2 sum_{j<i} beta_i beta_j M^{i-j} (1 - M^{2j}),
/// with i ranging over the spec's index convention.
[[nodiscard]] double v_star_avglookahead(const ScalarChainSpec& spec);

enum class OuterRule { plain, avg };

/// Fixed point of the exact slow-weight variance recursion, obtained by
/// propagating the inner chain's full covariance matrix through one outer
/// step and iterating the resulting affine map (change < 1e-14).
/// Throws when the composed map does not contract.
[[nodiscard]] double generic_stationary_variance(const ScalarChainSpec& spec, OuterRule rule);

// ---------------------------------------------------------------------------
// Local entropy of a diagonal quadratic L(x) = 1/2 sum h_i (x_i - c_i)^2:
// F(theta, gamma) = log int exp(-L(x) - gamma/2 |theta - x|^2) dx.

struct EntropyQuery {
    std::vector<double> h;
    std::vector<double> c;
    double gamma = 1.0;
    std::vector<double> theta;

    void validate() const;
};

/// Mean of the Gibbs measure over x: (h c + gamma theta) / (h + gamma).
[[nodiscard]] std::vector<double> entropy_gibbs_mean(const EntropyQuery& q);
/// Closed-form F(theta, gamma) including its Gaussian normalizer.
[[nodiscard]] double entropy_value(const EntropyQuery& q);
/// gamma (E[x] - theta): the ascent direction of F.
[[nodiscard]] std::vector<double> entropy_grad(const EntropyQuery& q);

}  // namespace flatlab::theory
