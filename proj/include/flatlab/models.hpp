#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "flatlab/params.hpp"
#include "flatlab/rng.hpp"

namespace flatlab {

struct LossGrad {
    double loss = 0.0;
    ParamVec grad;
};

using LossFn = std::function<double(const ParamVec&)>;
using GradFn = std::function<ParamVec(const ParamVec&)>;

/// Minibatch-driven objective consumed by the optimizers. `next_batch` advances
/// the stream; every evaluation until the next call sees the same batch.
class StochasticObjective {
public:
    virtual ~StochasticObjective() = default;

    [[nodiscard]] virtual const LayoutPtr& layout() const = 0;
    /// Returns false once the stream is exhausted.
    virtual bool next_batch() = 0;
    [[nodiscard]] virtual LossGrad loss_grad(const ParamVec& weights) const = 0;
};

// ---------------------------------------------------------------------------
// Noisy quadratic: L(theta) = 1/2 (theta - c)^T diag(h) (theta - c), c ~ N(center_mean, diag(sigma2)).

struct QuadraticSpec {
    std::vector<double> h;
    std::vector<double> sigma2;
    std::vector<double> center_mean;

    [[nodiscard]] std::size_t dim() const noexcept { return h.size(); }
    /// Throws on non-positive curvature, negative variance or ragged vectors.
    void validate() const;
    [[nodiscard]] LayoutPtr layout() const;

    /// Builds a spec with zero center mean.
    [[nodiscard]] static QuadraticSpec centered(std::vector<double> h, std::vector<double> sigma2);
};

[[nodiscard]] std::vector<double> quad_sample_center(const QuadraticSpec& spec, Rng& rng);
[[nodiscard]] double quad_loss(const QuadraticSpec& spec, const ParamVec& theta, std::span<const double> center);
[[nodiscard]] LossGrad quad_loss_grad(const QuadraticSpec& spec, const ParamVec& theta, std::span<const double> center);

/// Draws a fresh center on every batch. With `deterministic` the center is
/// pinned to the mean (noiseless quadratic).
class QuadraticObjective final : public StochasticObjective {
public:
    QuadraticObjective(QuadraticSpec spec, std::uint64_t seed, bool deterministic = false);

    [[nodiscard]] const LayoutPtr& layout() const override { return layout_; }
    bool next_batch() override;
    [[nodiscard]] LossGrad loss_grad(const ParamVec& weights) const override;

    [[nodiscard]] std::span<const double> current_center() const noexcept { return center_; }
    [[nodiscard]] const QuadraticSpec& spec() const noexcept { return spec_; }

private:
    QuadraticSpec spec_;
    LayoutPtr layout_;
    Rng rng_;
    bool deterministic_;
    std::vector<double> center_;
};

/// Replays a fixed list of centers, then reports exhaustion.
class ReplayQuadraticObjective final : public StochasticObjective {
public:
    ReplayQuadraticObjective(QuadraticSpec spec, std::vector<std::vector<double>> centers);

    [[nodiscard]] const LayoutPtr& layout() const override { return layout_; }
    bool next_batch() override;
    [[nodiscard]] LossGrad loss_grad(const ParamVec& weights) const override;

private:
    QuadraticSpec spec_;
    LayoutPtr layout_;
    std::vector<std::vector<double>> centers_;
    std::size_t cursor_ = 0;
};

// ---------------------------------------------------------------------------
// Tiny MLP classifier with analytic cross-entropy gradient.

enum class Activation { tanh, relu };

struct MlpSpec {
    std::vector<std::size_t> layer_sizes;  // input, hidden..., output
    Activation activation = Activation::tanh;
    std::uint64_t init_seed = 0;
    double init_scale = 1.0;

    void validate() const;
    [[nodiscard]] std::size_t num_layers() const noexcept { return layer_sizes.size() - 1; }
    [[nodiscard]] std::size_t num_classes() const noexcept { return layer_sizes.back(); }
};

/// One weight group ("layerL.weight", out x in, row-major) and one bias group per layer.
[[nodiscard]] LayoutPtr mlp_layout(const MlpSpec& spec);
/// Weights uniform in +-init_scale/sqrt(fan_in), biases zero.
[[nodiscard]] ParamVec mlp_init(const MlpSpec& spec);

struct DomainDataset {
    Eigen::MatrixXd inputs;  // n_samples x n_features
    std::vector<int> labels;
    double domain_param = 0.0;  // rotation angle, degrees
    int n_classes = 0;

    [[nodiscard]] std::size_t size() const noexcept { return labels.size(); }
    void validate() const;
};

struct MlpActivations {
    Eigen::MatrixXd penultimate;  // last hidden layer (input rows if no hidden layer)
    Eigen::MatrixXd logits;
};

[[nodiscard]] MlpActivations mlp_forward(const MlpSpec& spec, const ParamVec& weights, const Eigen::MatrixXd& inputs);
[[nodiscard]] std::vector<int> mlp_predict(const MlpSpec& spec, const ParamVec& weights, const Eigen::MatrixXd& inputs);
[[nodiscard]] double mlp_accuracy(const MlpSpec& spec, const ParamVec& weights, const DomainDataset& data);

/// Mean cross-entropy over `batch` (indices into `data`) and its exact gradient.
[[nodiscard]] LossGrad mlp_loss_grad(const MlpSpec& spec, const ParamVec& weights, const DomainDataset& data,
                                     std::span<const std::size_t> batch);
[[nodiscard]] double mlp_loss(const MlpSpec& spec, const ParamVec& weights, const DomainDataset& data,
                              std::span<const std::size_t> batch);

[[nodiscard]] std::vector<std::size_t> all_indices(const DomainDataset& data);

/// Full-dataset loss / gradient closures (frozen batch, for diagnostics).
[[nodiscard]] LossFn mlp_full_loss(const MlpSpec& spec, const DomainDataset& data);
[[nodiscard]] GradFn mlp_full_grad(const MlpSpec& spec, const DomainDataset& data);

/// Epoch-shuffled minibatch indices from a seeded stream.
class BatchSampler {
public:
    BatchSampler(std::size_t n_samples, std::size_t batch_size, std::uint64_t seed);
    [[nodiscard]] std::vector<std::size_t> next();

private:
    void reshuffle();

    std::size_t n_;
    std::size_t batch_size_;
    Rng rng_;
    std::vector<std::size_t> order_;
    std::size_t cursor_ = 0;
};

class MlpObjective final : public StochasticObjective {
public:
    /// `max_batches` bounds the stream; nullopt means unbounded.
    MlpObjective(MlpSpec spec, const DomainDataset& data, std::size_t batch_size, std::uint64_t seed,
                 std::optional<std::size_t> max_batches = std::nullopt);

    [[nodiscard]] const LayoutPtr& layout() const override { return layout_; }
    bool next_batch() override;
    [[nodiscard]] LossGrad loss_grad(const ParamVec& weights) const override;

    [[nodiscard]] const std::vector<std::size_t>& current_batch() const noexcept { return batch_; }

private:
    MlpSpec spec_;
    const DomainDataset* data_;
    LayoutPtr layout_;
    BatchSampler sampler_;
    std::optional<std::size_t> remaining_;
    std::vector<std::size_t> batch_;
};

// ---------------------------------------------------------------------------
// Rotated two-cluster-per-class domains.

inline constexpr int kDefaultDomainClasses = 4;

/// Base pattern for (base_seed, n_samples), rotated by `angle_deg`.
[[nodiscard]] DomainDataset make_rotated_domain(std::uint64_t base_seed, double angle_deg, std::size_t n_samples,
                                                int n_classes = kDefaultDomainClasses);
[[nodiscard]] std::vector<DomainDataset> make_rotated_domains(std::uint64_t base_seed, std::span<const double> angles,
                                                              std::size_t n_per_domain,
                                                              int n_classes = kDefaultDomainClasses);
[[nodiscard]] DomainDataset rotate_dataset(const DomainDataset& data, double angle_deg);

/// CSV `x0,x1,label,domain_angle`, one row per sample.
void write_dataset_csv(std::ostream& out, std::span<const DomainDataset> domains);

// ---------------------------------------------------------------------------
// Shifted-loss probe: a test-domain loss as a shifted source loss.

struct ShiftProbe {
    std::vector<double> t;
    std::vector<double> train;    // L_S(w(t))
    std::vector<double> test;     // L_T(w(t))
    std::vector<double> shifted;  // L_S(w(t) + delta) + [L_T(theta_T) - L_S(theta_S)]
};

[[nodiscard]] ShiftProbe shifted_loss_probe(const LossFn& loss_source, const LossFn& loss_target,
                                            const ParamVec& theta_source, const ParamVec& theta_target,
                                            std::span<const double> t_grid);

}  // namespace flatlab
