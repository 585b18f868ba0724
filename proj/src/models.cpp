#include "flatlab/models.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <ostream>

#include <boost/random/uniform_int_distribution.hpp>
#include <fmt/format.h>

#include "flatlab/csv.hpp"
#include "flatlab/error.hpp"

namespace flatlab {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstRowMap = Eigen::Map<const RowMatrix>;
using RowMap = Eigen::Map<RowMatrix>;
using ConstVecMap = Eigen::Map<const Eigen::VectorXd>;
using VecMap = Eigen::Map<Eigen::VectorXd>;

void check_quadratic_dims(const QuadraticSpec& spec, const ParamVec& theta, std::span<const double> center) {
    if (theta.size() != spec.dim() || center.size() != spec.dim()) {
        throw Error(fmt::format("quadratic: dimension mismatch (spec {}, theta {}, center {})", spec.dim(),
                                theta.size(), center.size()));
    }
}

}  // namespace

// --- quadratic -------------------------------------------------------------

void QuadraticSpec::validate() const {
    if (h.empty()) {
        throw Error("QuadraticSpec: dim must be positive");
    }
    if (sigma2.size() != h.size() || center_mean.size() != h.size()) {
        throw Error("QuadraticSpec: h, sigma2 and center_mean must have equal length");
    }
    for (std::size_t i = 0; i < h.size(); ++i) {
        if (!(h[i] > 0.0) || !std::isfinite(h[i])) {
            throw Error(fmt::format("QuadraticSpec: h[{}] must be positive and finite", i));
        }
        if (!(sigma2[i] >= 0.0) || !std::isfinite(sigma2[i])) {
            throw Error(fmt::format("QuadraticSpec: sigma2[{}] must be non-negative and finite", i));
        }
        if (!std::isfinite(center_mean[i])) {
            throw Error(fmt::format("QuadraticSpec: center_mean[{}] must be finite", i));
        }
    }
}

LayoutPtr QuadraticSpec::layout() const { return GroupLayout::single("theta", dim()); }

QuadraticSpec QuadraticSpec::centered(std::vector<double> h, std::vector<double> sigma2) {
    QuadraticSpec spec;
    spec.center_mean.assign(h.size(), 0.0);
    spec.h = std::move(h);
    spec.sigma2 = std::move(sigma2);
    spec.validate();
    return spec;
}

std::vector<double> quad_sample_center(const QuadraticSpec& spec, Rng& rng) {
    std::vector<double> c(spec.dim());
    for (std::size_t i = 0; i < spec.dim(); ++i) {
        c[i] = spec.center_mean[i] + std::sqrt(spec.sigma2[i]) * rng.normal();
    }
    return c;
}

double quad_loss(const QuadraticSpec& spec, const ParamVec& theta, std::span<const double> center) {
    check_quadratic_dims(spec, theta, center);
    double loss = 0.0;
    for (std::size_t i = 0; i < spec.dim(); ++i) {
        const double d = theta[i] - center[i];
        loss += 0.5 * spec.h[i] * d * d;
    }
    return loss;
}

LossGrad quad_loss_grad(const QuadraticSpec& spec, const ParamVec& theta, std::span<const double> center) {
    check_quadratic_dims(spec, theta, center);
    LossGrad out{0.0, ParamVec(theta.layout_ptr())};
    for (std::size_t i = 0; i < spec.dim(); ++i) {
        const double d = theta[i] - center[i];
        out.loss += 0.5 * spec.h[i] * d * d;
        out.grad[i] = spec.h[i] * d;
    }
    return out;
}

QuadraticObjective::QuadraticObjective(QuadraticSpec spec, std::uint64_t seed, bool deterministic)
    : spec_(std::move(spec)), rng_(seed), deterministic_(deterministic) {
    spec_.validate();
    layout_ = spec_.layout();
    center_ = spec_.center_mean;
}

bool QuadraticObjective::next_batch() {
    if (!deterministic_) {
        center_ = quad_sample_center(spec_, rng_);
    }
    return true;
}

LossGrad QuadraticObjective::loss_grad(const ParamVec& weights) const {
    return quad_loss_grad(spec_, weights, center_);
}

ReplayQuadraticObjective::ReplayQuadraticObjective(QuadraticSpec spec, std::vector<std::vector<double>> centers)
    : spec_(std::move(spec)), centers_(std::move(centers)) {
    spec_.validate();
    layout_ = spec_.layout();
}

bool ReplayQuadraticObjective::next_batch() {
    if (cursor_ >= centers_.size()) {
        return false;
    }
    ++cursor_;
    return true;
}

LossGrad ReplayQuadraticObjective::loss_grad(const ParamVec& weights) const {
    if (cursor_ == 0) {
        throw Error("ReplayQuadraticObjective: loss_grad before first batch");
    }
    return quad_loss_grad(spec_, weights, centers_[cursor_ - 1]);
}

// --- MLP -------------------------------------------------------------------

void MlpSpec::validate() const {
    if (layer_sizes.size() < 2) {
        throw Error("MlpSpec: at least two layer sizes (input, output) required");
    }
    for (std::size_t s : layer_sizes) {
        if (s == 0) {
            throw Error("MlpSpec: layer sizes must be positive");
        }
    }
    if (layer_sizes.back() < 2) {
        throw Error("MlpSpec: output size must be at least 2 for classification");
    }
    if (!(init_scale > 0.0)) {
        throw Error("MlpSpec: init_scale must be positive");
    }
}

LayoutPtr mlp_layout(const MlpSpec& spec) {
    spec.validate();
    std::vector<GroupLayout::Group> groups;
    for (std::size_t l = 0; l < spec.num_layers(); ++l) {
        groups.push_back({fmt::format("layer{}.weight", l), spec.layer_sizes[l + 1] * spec.layer_sizes[l]});
        groups.push_back({fmt::format("layer{}.bias", l), spec.layer_sizes[l + 1]});
    }
    return std::make_shared<const GroupLayout>(std::move(groups));
}

ParamVec mlp_init(const MlpSpec& spec) {
    ParamVec w(mlp_layout(spec));
    Rng rng(spec.init_seed);
    for (std::size_t l = 0; l < spec.num_layers(); ++l) {
        const double bound = spec.init_scale / std::sqrt(static_cast<double>(spec.layer_sizes[l]));
        for (double& v : w.group(2 * l)) {
            v = rng.uniform(-bound, bound);
        }
    }
    return w;
}

void DomainDataset::validate() const {
    if (labels.empty()) {
        throw Error("DomainDataset: at least one sample required");
    }
    if (static_cast<std::size_t>(inputs.rows()) != labels.size()) {
        throw Error("DomainDataset: inputs/labels row mismatch");
    }
    if (!inputs.allFinite()) {
        throw Error("DomainDataset: non-finite input");
    }
    for (int y : labels) {
        if (y < 0 || y >= n_classes) {
            throw Error(fmt::format("DomainDataset: label {} outside [0, {})", y, n_classes));
        }
    }
}

namespace {

struct LayerView {
    ConstRowMap weight;
    ConstVecMap bias;
};

std::vector<LayerView> layer_views(const MlpSpec& spec, const ParamVec& weights) {
    if (weights.size() != mlp_layout(spec)->total_len() || weights.layout().group_count() != 2 * spec.num_layers()) {
        throw Error("mlp: weight layout does not match spec");
    }
    std::vector<LayerView> views;
    views.reserve(spec.num_layers());
    for (std::size_t l = 0; l < spec.num_layers(); ++l) {
        const auto rows = static_cast<Eigen::Index>(spec.layer_sizes[l + 1]);
        const auto cols = static_cast<Eigen::Index>(spec.layer_sizes[l]);
        views.push_back({ConstRowMap(weights.group(2 * l).data(), rows, cols),
                         ConstVecMap(weights.group(2 * l + 1).data(), rows)});
    }
    return views;
}

void activate(Activation act, Eigen::MatrixXd& z) {
    if (act == Activation::tanh) {
        z = z.array().tanh();
    } else {
        z = z.array().max(0.0);
    }
}

// derivative expressed through the activation output a = act(z)
Eigen::MatrixXd activation_slope(Activation act, const Eigen::MatrixXd& a) {
    if (act == Activation::tanh) {
        return (1.0 - a.array().square()).matrix();
    }
    return (a.array() > 0.0).cast<double>().matrix();
}

struct ForwardCache {
    std::vector<Eigen::MatrixXd> acts;  // acts[0] = inputs, acts[l+1] = output of layer l (logits last)
};

ForwardCache forward_all(const MlpSpec& spec, const std::vector<LayerView>& layers, Eigen::MatrixXd inputs) {
    if (static_cast<std::size_t>(inputs.cols()) != spec.layer_sizes.front()) {
        throw Error(fmt::format("mlp: expected {} input features, got {}", spec.layer_sizes.front(), inputs.cols()));
    }
    ForwardCache cache;
    cache.acts.reserve(layers.size() + 1);
    cache.acts.push_back(std::move(inputs));
    for (std::size_t l = 0; l < layers.size(); ++l) {
        Eigen::MatrixXd z = cache.acts.back() * layers[l].weight.transpose();
        z.rowwise() += layers[l].bias.transpose();
        if (l + 1 < layers.size()) {
            activate(spec.activation, z);
        }
        cache.acts.push_back(std::move(z));
    }
    return cache;
}

Eigen::MatrixXd gather_rows(const DomainDataset& data, std::span<const std::size_t> batch) {
    Eigen::MatrixXd x(static_cast<Eigen::Index>(batch.size()), data.inputs.cols());
    for (std::size_t r = 0; r < batch.size(); ++r) {
        if (batch[r] >= data.size()) {
            throw Error(fmt::format("mlp: batch index {} out of range ({} samples)", batch[r], data.size()));
        }
        x.row(static_cast<Eigen::Index>(r)) = data.inputs.row(static_cast<Eigen::Index>(batch[r]));
    }
    return x;
}

// Row-wise log-softmax cross-entropy; fills `probs` with softmax when non-null.
double cross_entropy(const Eigen::MatrixXd& logits, const DomainDataset& data, std::span<const std::size_t> batch,
                     Eigen::MatrixXd* probs) {
    double total = 0.0;
    if (probs) {
        probs->resize(logits.rows(), logits.cols());
    }
    for (Eigen::Index r = 0; r < logits.rows(); ++r) {
        const double m = logits.row(r).maxCoeff();
        const Eigen::RowVectorXd e = (logits.row(r).array() - m).exp().matrix();
        const double z = e.sum();
        const int y = data.labels[batch[static_cast<std::size_t>(r)]];
        total += (m + std::log(z)) - logits(r, y);
        if (probs) {
            probs->row(r) = e / z;
        }
    }
    return total / static_cast<double>(logits.rows());
}

}  // namespace

MlpActivations mlp_forward(const MlpSpec& spec, const ParamVec& weights, const Eigen::MatrixXd& inputs) {
    const auto layers = layer_views(spec, weights);
    auto cache = forward_all(spec, layers, inputs);
    MlpActivations out;
    out.logits = std::move(cache.acts.back());
    out.penultimate = std::move(cache.acts[cache.acts.size() - 2]);
    return out;
}

std::vector<int> mlp_predict(const MlpSpec& spec, const ParamVec& weights, const Eigen::MatrixXd& inputs) {
    const auto logits = mlp_forward(spec, weights, inputs).logits;
    std::vector<int> preds(static_cast<std::size_t>(logits.rows()));
    for (Eigen::Index r = 0; r < logits.rows(); ++r) {
        Eigen::Index arg = 0;
        logits.row(r).maxCoeff(&arg);
        preds[static_cast<std::size_t>(r)] = static_cast<int>(arg);
    }
    return preds;
}

double mlp_accuracy(const MlpSpec& spec, const ParamVec& weights, const DomainDataset& data) {
    const auto preds = mlp_predict(spec, weights, data.inputs);
    std::size_t hit = 0;
    for (std::size_t i = 0; i < preds.size(); ++i) {
        hit += preds[i] == data.labels[i] ? 1 : 0;
    }
    return static_cast<double>(hit) / static_cast<double>(preds.size());
}

LossGrad mlp_loss_grad(const MlpSpec& spec, const ParamVec& weights, const DomainDataset& data,
                       std::span<const std::size_t> batch) {
    if (batch.empty()) {
        throw Error("mlp_loss_grad: empty batch");
    }
    const auto layers = layer_views(spec, weights);
    auto cache = forward_all(spec, layers, gather_rows(data, batch));

    Eigen::MatrixXd delta;
    LossGrad out{cross_entropy(cache.acts.back(), data, batch, &delta), ParamVec(weights.layout_ptr())};
    for (std::size_t r = 0; r < batch.size(); ++r) {
        delta(static_cast<Eigen::Index>(r), data.labels[batch[r]]) -= 1.0;
    }
    delta /= static_cast<double>(batch.size());

    for (std::size_t l = layers.size(); l-- > 0;) {
        const auto rows = static_cast<Eigen::Index>(spec.layer_sizes[l + 1]);
        const auto cols = static_cast<Eigen::Index>(spec.layer_sizes[l]);
        RowMap(out.grad.group(2 * l).data(), rows, cols) = delta.transpose() * cache.acts[l];
        VecMap(out.grad.group(2 * l + 1).data(), rows) = delta.colwise().sum().transpose();
        if (l > 0) {
            Eigen::MatrixXd back = delta * layers[l].weight;
            delta = back.cwiseProduct(activation_slope(spec.activation, cache.acts[l]));
        }
    }
    return out;
}

double mlp_loss(const MlpSpec& spec, const ParamVec& weights, const DomainDataset& data,
                std::span<const std::size_t> batch) {
    if (batch.empty()) {
        throw Error("mlp_loss: empty batch");
    }
    const auto layers = layer_views(spec, weights);
    auto cache = forward_all(spec, layers, gather_rows(data, batch));
    return cross_entropy(cache.acts.back(), data, batch, nullptr);
}

std::vector<std::size_t> all_indices(const DomainDataset& data) {
    std::vector<std::size_t> idx(data.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    return idx;
}

LossFn mlp_full_loss(const MlpSpec& spec, const DomainDataset& data) {
    return [spec, &data, idx = all_indices(data)](const ParamVec& w) { return mlp_loss(spec, w, data, idx); };
}

GradFn mlp_full_grad(const MlpSpec& spec, const DomainDataset& data) {
    return [spec, &data, idx = all_indices(data)](const ParamVec& w) {
        return mlp_loss_grad(spec, w, data, idx).grad;
    };
}

BatchSampler::BatchSampler(std::size_t n_samples, std::size_t batch_size, std::uint64_t seed)
    : n_(n_samples), batch_size_(batch_size), rng_(seed) {
    if (n_ == 0 || batch_size_ == 0) {
        throw Error("BatchSampler: sample count and batch size must be positive");
    }
    order_.resize(n_);
    for (std::size_t i = 0; i < n_; ++i) order_[i] = i;
    reshuffle();
}

void BatchSampler::reshuffle() {
    for (std::size_t i = n_ - 1; i > 0; --i) {
        boost::random::uniform_int_distribution<std::size_t> pick(0, i);
        std::swap(order_[i], order_[pick(rng_)]);
    }
    cursor_ = 0;
}

std::vector<std::size_t> BatchSampler::next() {
    std::vector<std::size_t> batch;
    batch.reserve(batch_size_);
    while (batch.size() < batch_size_) {
        if (cursor_ == n_) {
            reshuffle();
        }
        batch.push_back(order_[cursor_++]);
    }
    return batch;
}

MlpObjective::MlpObjective(MlpSpec spec, const DomainDataset& data, std::size_t batch_size, std::uint64_t seed,
                           std::optional<std::size_t> max_batches)
    : spec_(std::move(spec)),
      data_(&data),
      layout_(mlp_layout(spec_)),
      sampler_(data.size(), batch_size, seed),
      remaining_(max_batches) {
    data.validate();
    if (data.n_classes != static_cast<int>(spec_.num_classes())) {
        throw Error("MlpObjective: dataset class count does not match network output size");
    }
}

bool MlpObjective::next_batch() {
    if (remaining_) {
        if (*remaining_ == 0) {
            return false;
        }
        --*remaining_;
    }
    batch_ = sampler_.next();
    return true;
}

LossGrad MlpObjective::loss_grad(const ParamVec& weights) const {
    if (batch_.empty()) {
        throw Error("MlpObjective: loss_grad before first batch");
    }
    return mlp_loss_grad(spec_, weights, *data_, batch_);
}

// --- rotated domains -------------------------------------------------------

namespace {

constexpr double kRingRadius = 2.0;
constexpr double kClusterStd = 0.35;

}  // namespace

DomainDataset make_rotated_domain(std::uint64_t base_seed, double angle_deg, std::size_t n_samples, int n_classes) {
    if (n_classes < 2) {
        throw Error("make_rotated_domain: at least two classes required");
    }
    if (n_samples < static_cast<std::size_t>(n_classes)) {
        throw Error(fmt::format("make_rotated_domain: n_per_domain {} < classes {}", n_samples, n_classes));
    }
    // Two clusters per class on a ring; cluster m belongs to class m mod C, so
    // each class owns two opposite sectors.
    const int clusters = 2 * n_classes;
    DomainDataset base;
    base.n_classes = n_classes;
    base.inputs.resize(static_cast<Eigen::Index>(n_samples), 2);
    base.labels.resize(n_samples);
    Rng rng(derive_seed(base_seed, 0x646f6d61696eULL));
    for (std::size_t i = 0; i < n_samples; ++i) {
        const int label = static_cast<int>(i % static_cast<std::size_t>(n_classes));
        const int cluster = label + n_classes * static_cast<int>((i / static_cast<std::size_t>(n_classes)) % 2);
        const double phi = 2.0 * std::numbers::pi * (cluster + 0.5) / clusters;
        const auto r = static_cast<Eigen::Index>(i);
        base.inputs(r, 0) = kRingRadius * std::cos(phi) + kClusterStd * rng.normal();
        base.inputs(r, 1) = kRingRadius * std::sin(phi) + kClusterStd * rng.normal();
        base.labels[i] = label;
    }
    return rotate_dataset(base, angle_deg);
}

std::vector<DomainDataset> make_rotated_domains(std::uint64_t base_seed, std::span<const double> angles,
                                                std::size_t n_per_domain, int n_classes) {
    if (angles.size() < 2) {
        throw Error("make_rotated_domains: at least two angles required");
    }
    std::vector<DomainDataset> out;
    out.reserve(angles.size());
    for (double a : angles) {
        out.push_back(make_rotated_domain(base_seed, a, n_per_domain, n_classes));
    }
    return out;
}

DomainDataset rotate_dataset(const DomainDataset& data, double angle_deg) {
    if (data.inputs.cols() != 2) {
        throw Error("rotate_dataset: two input features required");
    }
    DomainDataset out = data;
    out.domain_param = data.domain_param + angle_deg;
    if (angle_deg == 0.0) {
        return out;
    }
    const double rad = angle_deg * std::numbers::pi / 180.0;
    Eigen::Matrix2d rot;
    rot << std::cos(rad), -std::sin(rad), std::sin(rad), std::cos(rad);
    out.inputs = data.inputs * rot.transpose();
    return out;
}

void write_dataset_csv(std::ostream& out, std::span<const DomainDataset> domains) {
    CsvWriter csv(out, {"x0", "x1", "label", "domain_angle"});
    for (const auto& d : domains) {
        for (Eigen::Index r = 0; r < d.inputs.rows(); ++r) {
            csv.row(d.inputs(r, 0), d.inputs(r, 1), d.labels[static_cast<std::size_t>(r)], d.domain_param);
        }
    }
}

// --- shifted-loss probe ----------------------------------------------------

ShiftProbe shifted_loss_probe(const LossFn& loss_source, const LossFn& loss_target, const ParamVec& theta_source,
                              const ParamVec& theta_target, std::span<const double> t_grid) {
    require_same_layout(theta_source, theta_target, "shifted_loss_probe");
    const ParamVec delta = subtract(theta_source, theta_target);
    const double constant = loss_target(theta_target) - loss_source(theta_source);
    ShiftProbe probe;
    for (double t : t_grid) {
        const ParamVec w = interpolate(theta_source, theta_target, t);
        probe.t.push_back(t);
        probe.train.push_back(loss_source(w));
        probe.test.push_back(loss_target(w));
        probe.shifted.push_back(loss_source(add(w, delta)) + constant);
    }
    return probe;
}

}  // namespace flatlab
