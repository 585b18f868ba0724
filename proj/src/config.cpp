#include "flatlab/config.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include <fmt/format.h>
#include "json.hpp"

#include "flatlab/error.hpp"

namespace flatlab {

using nlohmann::json;

std::string_view to_string(ExperimentKind kind) noexcept {
    switch (kind) {
        case ExperimentKind::variance_check: return "variance-check";
        case ExperimentKind::stability_map: return "stability-map";
        case ExperimentKind::train: return "train";
        case ExperimentKind::flatness: return "flatness";
        case ExperimentKind::diversity: return "diversity";
        case ExperimentKind::entropy_check: return "entropy-check";
        case ExperimentKind::shift_probe: return "shift-probe";
    }
    return "unknown";
}

std::optional<ExperimentKind> parse_experiment_kind(std::string_view name) noexcept {
    for (auto k : {ExperimentKind::variance_check, ExperimentKind::stability_map, ExperimentKind::train,
                   ExperimentKind::flatness, ExperimentKind::diversity, ExperimentKind::entropy_check,
                   ExperimentKind::shift_probe}) {
        if (to_string(k) == name) return k;
    }
    return std::nullopt;
}

std::string format_diagnostic(const Diagnostic& d) {
    return d.path.empty() ? d.message : fmt::format("{}: {}", d.path, d.message);
}

namespace {

// Typed field access that records a diagnostic instead of throwing.
class Reader {
public:
    explicit Reader(std::vector<Diagnostic>& diags) : diags_(diags) {}

    void error(const std::string& path, std::string message) { diags_.push_back({path, std::move(message)}); }

    static std::string join(const std::string& path, std::string_view key) {
        return path.empty() ? std::string(key) : fmt::format("{}.{}", path, key);
    }

    bool object(const json& j, const std::string& path) {
        if (!j.is_object()) {
            error(path, "expected an object");
            return false;
        }
        return true;
    }

    void only_keys(const json& obj, const std::string& path, std::initializer_list<std::string_view> allowed) {
        for (const auto& [key, value] : obj.items()) {
            if (std::find(allowed.begin(), allowed.end(), key) == allowed.end()) {
                error(join(path, key), "unknown field");
            }
        }
    }

    double number(const json& obj, const std::string& path, const char* key, double def) {
        if (!obj.contains(key)) return def;
        const auto& v = obj.at(key);
        if (!v.is_number()) {
            error(join(path, key), "expected a number");
            return def;
        }
        const double d = v.get<double>();
        if (!std::isfinite(d)) {
            error(join(path, key), "must be finite");
            return def;
        }
        return d;
    }

    std::size_t count(const json& obj, const std::string& path, const char* key, std::size_t def) {
        if (!obj.contains(key)) return def;
        const auto& v = obj.at(key);
        if (!v.is_number_unsigned()) {
            error(join(path, key), "expected a non-negative integer");
            return def;
        }
        return v.get<std::size_t>();
    }

    std::string string(const json& obj, const std::string& path, const char* key, std::string def) {
        if (!obj.contains(key)) return def;
        const auto& v = obj.at(key);
        if (!v.is_string()) {
            error(join(path, key), "expected a string");
            return def;
        }
        return v.get<std::string>();
    }

    std::vector<double> numbers(const json& obj, const std::string& path, const char* key, std::vector<double> def) {
        if (!obj.contains(key)) return def;
        const auto& v = obj.at(key);
        const std::string p = join(path, key);
        if (!v.is_array()) {
            error(p, "expected an array of numbers");
            return def;
        }
        std::vector<double> out;
        for (std::size_t i = 0; i < v.size(); ++i) {
            if (!v[i].is_number() || !std::isfinite(v[i].get<double>())) {
                error(fmt::format("{}[{}]", p, i), "expected a finite number");
                return def;
            }
            out.push_back(v[i].get<double>());
        }
        return out;
    }

    void require(bool ok, const std::string& path, const char* key, std::string message) {
        if (!ok) error(join(path, key), std::move(message));
    }

private:
    std::vector<Diagnostic>& diags_;
};

// Table 2 defaults: Adam with eta = 5e-4.
InnerOptConfig parse_inner(Reader& r, const json& parent, const std::string& path,
                           const std::string& key = "inner", InnerOptConfig cfg = {InnerKind::adam, 5e-4}) {
    if (!parent.contains(key)) return cfg;
    const std::string p = Reader::join(path, key);
    const json& j = parent.at(key);
    if (!r.object(j, p)) return cfg;
    r.only_keys(j, p, {"kind", "eta", "momentum", "weight_decay", "beta1", "beta2", "eps"});
    const std::string kind = r.string(j, p, "kind", "adam");
    if (kind == "sgd") {
        cfg.kind = InnerKind::sgd;
    } else if (kind != "adam") {
        r.error(Reader::join(p, "kind"), fmt::format("unknown inner optimizer '{}' (expected sgd or adam)", kind));
    }
    cfg.eta = r.number(j, p, "eta", cfg.eta);
    cfg.momentum = r.number(j, p, "momentum", cfg.momentum);
    cfg.weight_decay = r.number(j, p, "weight_decay", cfg.weight_decay);
    cfg.beta1 = r.number(j, p, "beta1", cfg.beta1);
    cfg.beta2 = r.number(j, p, "beta2", cfg.beta2);
    cfg.eps = r.number(j, p, "eps", cfg.eps);
    r.require(cfg.eta > 0.0, p, "eta", "must be positive");
    r.require(cfg.momentum >= 0.0 && cfg.momentum < 1.0, p, "momentum", "must be in [0, 1)");
    r.require(cfg.weight_decay >= 0.0, p, "weight_decay", "must be non-negative");
    r.require(cfg.beta1 >= 0.0 && cfg.beta1 < 1.0, p, "beta1", "must be in [0, 1)");
    r.require(cfg.beta2 >= 0.0 && cfg.beta2 < 1.0, p, "beta2", "must be in [0, 1)");
    r.require(cfg.eps > 0.0, p, "eps", "must be positive");
    return cfg;
}

void check_beta(Reader& r, const std::vector<double>& beta, std::size_t k, const std::string& path) {
    if (beta.empty()) return;
    const std::string p = Reader::join(path, "beta");
    if (beta.size() != k) {
        r.error(p, fmt::format("has {} entries, expected k = {}", beta.size(), k));
        return;
    }
    double sum = 0.0;
    for (double b : beta) {
        if (b < 0.0) {
            r.error(p, "entries must be non-negative");
            return;
        }
        sum += b;
    }
    if (std::abs(sum - 1.0) > 1e-12) {
        r.error(p, fmt::format("weights sum to {:.17g}, expected 1", sum));
    }
}

bool valid_name(const std::string& s) {
    return !s.empty() && std::all_of(s.begin(), s.end(), [](char c) {
        return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') || c == '_' || c == '-';
    });
}

OptimizerSpec parse_optimizer(Reader& r, const json& j, const std::string& p) {
    OptimizerSpec spec;
    if (!r.object(j, p)) return spec;
    spec.name = r.string(j, p, "name", "");
    if (!valid_name(spec.name)) {
        r.error(Reader::join(p, "name"), "required; letters, digits, '_' and '-' only");
    }
    const std::string type = r.string(j, p, "type", "");
    spec.inner = parse_inner(r, j, p);
    if (type == "erm") {
        spec.kind = OptimizerKind::erm;
        r.only_keys(j, p, {"name", "type", "inner"});
    } else if (type == "lookahead") {
        spec.kind = OptimizerKind::lookahead;
        r.only_keys(j, p,
                    {"name", "type", "inner", "alpha", "k", "variant", "beta", "lambda", "history_window",
                     "noise_strength"});
        LookaheadConfig& la = spec.lookahead;
        la.inner = spec.inner;
        la.alpha = r.number(j, p, "alpha", la.alpha);
        la.k = r.count(j, p, "k", la.k);
        const std::string variant = r.string(j, p, "variant", "plain");
        if (variant == "plain") {
            la.variant = LookaheadVariant::plain;
        } else if (variant == "avg") {
            la.variant = LookaheadVariant::avg;
        } else if (variant == "reg") {
            la.variant = LookaheadVariant::reg;
        } else {
            r.error(Reader::join(p, "variant"), fmt::format("unknown variant '{}' (expected plain, avg or reg)", variant));
        }
        la.beta = r.numbers(j, p, "beta", {});
        la.lambda = r.number(j, p, "lambda", la.lambda);
        la.history_window = r.count(j, p, "history_window", la.history_window);
        la.noise_strength = r.number(j, p, "noise_strength", la.noise_strength);
        r.require(la.alpha > 0.0 && la.alpha <= 1.0, p, "alpha", "must be in (0, 1]");
        r.require(la.k >= 1, p, "k", "must be at least 1");
        r.require(la.lambda >= 0.0, p, "lambda", "must be non-negative");
        r.require(la.history_window >= 1, p, "history_window", "must be at least 1");
        r.require(la.noise_strength >= 0.0, p, "noise_strength", "must be non-negative");
        if (!la.beta.empty() && la.variant != LookaheadVariant::avg) {
            r.error(Reader::join(p, "beta"), "only used by the avg variant");
        }
        if (la.k >= 1) check_beta(r, la.beta, la.k, p);
    } else if (type == "sam") {
        spec.kind = OptimizerKind::sam;
        r.only_keys(j, p, {"name", "type", "inner", "rho"});
        spec.rho = r.number(j, p, "rho", spec.rho);
        r.require(spec.rho > 0.0, p, "rho", "must be positive");
    } else if (type == "swa") {
        spec.kind = OptimizerKind::swa;
        r.only_keys(j, p, {"name", "type", "inner", "swa_start", "swa_every"});
        spec.swa_start = r.count(j, p, "swa_start", spec.swa_start);
        spec.swa_every = r.count(j, p, "swa_every", spec.swa_every);
        r.require(spec.swa_every >= 1, p, "swa_every", "must be at least 1");
    } else {
        r.error(Reader::join(p, "type"), fmt::format("unknown optimizer type '{}' (expected erm, lookahead, sam or swa)",
                                                     type));
    }
    return spec;
}

void parse_model(Reader& r, const json& root, ModelConfig& model, const std::string& base_dir) {
    if (!root.contains("model")) return;
    const std::string p = "model";
    const json& j = root.at("model");
    if (!r.object(j, p)) return;
    const std::string kind = r.string(j, p, "kind", "");
    if (kind == "quadratic") {
        model.kind = ModelKind::quadratic;
        r.only_keys(j, p, {"kind", "h", "sigma2", "center_mean"});
        auto& q = model.quadratic;
        q.h = r.numbers(j, p, "h", {});
        q.sigma2 = r.numbers(j, p, "sigma2", std::vector<double>(q.h.size(), 1.0));
        q.center_mean = r.numbers(j, p, "center_mean", std::vector<double>(q.h.size(), 0.0));
        r.require(!q.h.empty(), p, "h", "must list at least one curvature");
        for (double h : q.h) {
            if (!(h > 0.0)) {
                r.error(Reader::join(p, "h"), "curvatures must be positive");
                break;
            }
        }
        r.require(q.sigma2.size() == q.h.size(), p, "sigma2", "must have one entry per curvature");
        r.require(std::all_of(q.sigma2.begin(), q.sigma2.end(), [](double s) { return s >= 0.0; }), p, "sigma2",
                  "variances must be non-negative");
        r.require(q.center_mean.size() == q.h.size(), p, "center_mean", "must have one entry per curvature");
    } else if (kind == "mlp") {
        model.kind = ModelKind::mlp;
        r.only_keys(j, p,
                    {"kind", "layer_sizes", "activation", "init_scale", "source_angles", "target_angles",
                     "n_per_domain", "batch_size", "data_seed", "init_checkpoint"});
        DomainTask& t = model.domain;
        if (j.contains("layer_sizes")) {
            const auto sizes = r.numbers(j, p, "layer_sizes", {});
            t.mlp.layer_sizes.clear();
            for (double s : sizes) {
                if (!(s >= 1.0) || s != std::floor(s)) {
                    r.error(Reader::join(p, "layer_sizes"), "entries must be positive integers");
                    break;
                }
                t.mlp.layer_sizes.push_back(static_cast<std::size_t>(s));
            }
            if (t.mlp.layer_sizes.size() < 2) {
                r.error(Reader::join(p, "layer_sizes"), "needs at least input and output widths");
                t.mlp.layer_sizes = {2, 16, 16, 4};
            }
        }
        r.require(t.mlp.layer_sizes.front() == 2, p, "layer_sizes", "input width must be 2 (planar domains)");
        r.require(t.mlp.layer_sizes.back() >= 2, p, "layer_sizes", "need at least two classes");
        const std::string act = r.string(j, p, "activation", "tanh");
        if (act == "relu") {
            t.mlp.activation = Activation::relu;
        } else if (act != "tanh") {
            r.error(Reader::join(p, "activation"), "expected tanh or relu");
        }
        t.mlp.init_scale = r.number(j, p, "init_scale", t.mlp.init_scale);
        r.require(t.mlp.init_scale > 0.0, p, "init_scale", "must be positive");
        t.source_angles = r.numbers(j, p, "source_angles", t.source_angles);
        t.target_angles = r.numbers(j, p, "target_angles", t.target_angles);
        r.require(!t.source_angles.empty(), p, "source_angles", "must be nonempty");
        r.require(!t.target_angles.empty(), p, "target_angles", "must be nonempty");
        t.n_per_domain = r.count(j, p, "n_per_domain", t.n_per_domain);
        t.batch_size = r.count(j, p, "batch_size", t.batch_size);
        t.data_seed = r.count(j, p, "data_seed", t.data_seed);
        r.require(t.n_per_domain >= t.mlp.layer_sizes.back(), p, "n_per_domain", "must be at least the class count");
        r.require(t.batch_size >= 1 && t.batch_size <= t.n_per_domain * t.source_angles.size(), p, "batch_size",
                  "must be in [1, source pool size]");
        if (j.contains("init_checkpoint")) {
            const std::string raw = r.string(j, p, "init_checkpoint", "");
            std::filesystem::path path(raw);
            if (path.is_relative()) path = std::filesystem::path(base_dir) / path;
            const std::string cp = Reader::join(p, "init_checkpoint");
            if (!std::filesystem::exists(path)) {
                r.error(cp, fmt::format("checkpoint '{}' does not exist", path.string()));
            } else {
                try {
                    const ParamVec w = load_checkpoint(path.string());
                    if (!(w.layout() == *mlp_layout(t.mlp))) {
                        r.error(cp, "checkpoint layout does not match layer_sizes");
                    }
                } catch (const std::exception& e) {
                    r.error(cp, e.what());
                }
            }
            model.init_checkpoint = path.string();
        }
    } else {
        r.error(Reader::join(p, "kind"), fmt::format("unknown model kind '{}' (expected quadratic or mlp)", kind));
    }
}

void parse_params(Reader& r, const json& root, ExperimentConfig& cfg) {
    static const json empty = json::object();
    const json& j = root.contains("params") ? root.at("params") : empty;
    const std::string p = "params";
    if (!r.object(j, p)) return;
    switch (cfg.experiment) {
        case ExperimentKind::variance_check: {
            r.only_keys(j, p, {"eta", "alpha", "k", "beta", "chains", "burn_in", "measured"});
            auto& v = cfg.variance;
            v.eta = r.number(j, p, "eta", v.eta);
            v.alpha = r.number(j, p, "alpha", v.alpha);
            v.k = r.count(j, p, "k", v.k);
            v.beta = r.numbers(j, p, "beta", {});
            v.chains = r.count(j, p, "chains", v.chains);
            v.burn_in = r.count(j, p, "burn_in", v.burn_in);
            v.measured = r.count(j, p, "measured", v.measured);
            r.require(v.eta > 0.0, p, "eta", "must be positive");
            r.require(v.alpha > 0.0 && v.alpha <= 1.0, p, "alpha", "must be in (0, 1]");
            r.require(v.k >= 1, p, "k", "must be at least 1");
            r.require(v.chains >= 2, p, "chains", "must be at least 2");
            r.require(v.measured >= 1, p, "measured", "must be at least 1");
            if (v.k >= 1) check_beta(r, v.beta, v.k, p);
            break;
        }
        case ExperimentKind::stability_map: {
            r.only_keys(j, p, {"eta", "alphas", "k", "h_min", "h_max", "n_h", "sigma2", "start", "steps"});
            auto& s = cfg.stability;
            s.eta = r.number(j, p, "eta", s.eta);
            s.alphas = r.numbers(j, p, "alphas", s.alphas);
            s.k = r.count(j, p, "k", s.k);
            s.h_min = r.number(j, p, "h_min", s.h_min);
            s.h_max = r.number(j, p, "h_max", s.h_max);
            s.n_h = r.count(j, p, "n_h", s.n_h);
            s.sigma2 = r.number(j, p, "sigma2", s.sigma2);
            s.start = r.number(j, p, "start", s.start);
            s.steps = r.count(j, p, "steps", s.steps);
            r.require(s.eta > 0.0, p, "eta", "must be positive");
            r.require(!s.alphas.empty() &&
                          std::all_of(s.alphas.begin(), s.alphas.end(), [](double a) { return a > 0.0 && a <= 1.0; }),
                      p, "alphas", "must be a nonempty list of values in (0, 1]");
            r.require(s.k >= 1, p, "k", "must be at least 1");
            r.require(s.h_min >= 0.0 && s.h_max > s.h_min, p, "h_max", "need 0 <= h_min < h_max");
            r.require(s.n_h >= 1, p, "n_h", "must be at least 1");
            r.require(s.sigma2 >= 0.0, p, "sigma2", "must be non-negative");
            break;
        }
        case ExperimentKind::train: {
            r.only_keys(j, p, {"steps", "checkpoint_every"});
            cfg.train.steps = r.count(j, p, "steps", cfg.train.steps);
            cfg.train.checkpoint_every = r.count(j, p, "checkpoint_every", cfg.train.checkpoint_every);
            r.require(cfg.train.steps >= 1, p, "steps", "must be at least 1");
            break;
        }
        case ExperimentKind::flatness: {
            r.only_keys(j, p,
                        {"steps", "power_iters", "power_tol", "perturb_strengths", "perturb_samples", "interp_points",
                         "plane", "dataset"});
            auto& f = cfg.flatness;
            f.steps = r.count(j, p, "steps", f.steps);
            f.power_iters = r.count(j, p, "power_iters", f.power_iters);
            f.power_tol = r.number(j, p, "power_tol", f.power_tol);
            f.perturb_strengths = r.numbers(j, p, "perturb_strengths", f.perturb_strengths);
            f.perturb_samples = r.count(j, p, "perturb_samples", f.perturb_samples);
            f.interp_points = r.count(j, p, "interp_points", f.interp_points);
            r.require(f.steps >= 1, p, "steps", "must be at least 1");
            r.require(f.power_iters >= 1, p, "power_iters", "must be at least 1");
            r.require(f.power_tol > 0.0, p, "power_tol", "must be positive");
            r.require(std::all_of(f.perturb_strengths.begin(), f.perturb_strengths.end(),
                                  [](double s) { return s >= 0.0; }),
                      p, "perturb_strengths", "must be non-negative");
            r.require(f.perturb_samples >= 1, p, "perturb_samples", "must be at least 1");
            r.require(f.interp_points >= 2, p, "interp_points", "must be at least 2");
            const std::string ds = r.string(j, p, "dataset", "train");
            if (ds == "validation") {
                f.dataset = DatasetSelector::validation;
            } else if (ds != "train") {
                r.error(Reader::join(p, "dataset"), "expected train or validation");
            }
            if (j.contains("plane")) {
                const std::string pp = Reader::join(p, "plane");
                const json& pl = j.at("plane");
                if (r.object(pl, pp)) {
                    r.only_keys(pl, pp, {"x_min", "x_max", "nx", "y_min", "y_max", "ny"});
                    f.plane.x_min = r.number(pl, pp, "x_min", f.plane.x_min);
                    f.plane.x_max = r.number(pl, pp, "x_max", f.plane.x_max);
                    f.plane.nx = r.count(pl, pp, "nx", f.plane.nx);
                    f.plane.y_min = r.number(pl, pp, "y_min", f.plane.y_min);
                    f.plane.y_max = r.number(pl, pp, "y_max", f.plane.y_max);
                    f.plane.ny = r.count(pl, pp, "ny", f.plane.ny);
                    r.require(f.plane.nx >= 1 && f.plane.ny >= 1, pp, "nx", "grid needs at least one point per axis");
                    r.require(f.plane.x_max >= f.plane.x_min && f.plane.y_max >= f.plane.y_min, pp, "x_max",
                              "ranges must be ordered");
                }
            }
            break;
        }
        case ExperimentKind::diversity: {
            r.only_keys(j, p, {"inner", "eta_multiplier", "k", "pretrain_steps", "pretrain"});
            auto& d = cfg.diversity;
            d.inner = parse_inner(r, j, p);
            d.pretrain_steps = r.count(j, p, "pretrain_steps", d.pretrain_steps);
            d.pretrain = parse_inner(r, j, p, "pretrain", d.pretrain);
            d.eta_multiplier = r.number(j, p, "eta_multiplier", d.eta_multiplier);
            d.k = r.count(j, p, "k", d.k);
            r.require(d.eta_multiplier > 0.0, p, "eta_multiplier", "must be positive");
            r.require(d.k >= 1, p, "k", "must be at least 1");
            break;
        }
        case ExperimentKind::entropy_check: {
            r.only_keys(j, p, {"n_queries", "dim", "step_size", "sampler_steps", "sampler_eta"});
            auto& e = cfg.entropy;
            e.n_queries = r.count(j, p, "n_queries", e.n_queries);
            e.dim = r.count(j, p, "dim", e.dim);
            e.step_size = r.number(j, p, "step_size", e.step_size);
            e.sampler_steps = r.count(j, p, "sampler_steps", e.sampler_steps);
            e.sampler_eta = r.number(j, p, "sampler_eta", e.sampler_eta);
            r.require(e.n_queries >= 1, p, "n_queries", "must be at least 1");
            r.require(e.dim >= 1, p, "dim", "must be at least 1");
            r.require(e.step_size > 0.0 && e.step_size <= 1.0, p, "step_size", "must be in (0, 1]");
            r.require(e.sampler_steps >= 2, p, "sampler_steps", "must be at least 2");
            r.require(e.sampler_eta > 0.0, p, "sampler_eta", "must be positive");
            break;
        }
        case ExperimentKind::shift_probe: {
            r.only_keys(j, p, {"t_min", "t_max", "n_t", "steps", "target_center"});
            auto& s = cfg.shift;
            s.t_min = r.number(j, p, "t_min", s.t_min);
            s.t_max = r.number(j, p, "t_max", s.t_max);
            s.n_t = r.count(j, p, "n_t", s.n_t);
            s.steps = r.count(j, p, "steps", s.steps);
            s.target_center = r.numbers(j, p, "target_center", {});
            r.require(s.t_max > s.t_min, p, "t_max", "must exceed t_min");
            r.require(s.n_t >= 2, p, "n_t", "must be at least 2");
            r.require(s.steps >= 1, p, "steps", "must be at least 1");
            if (cfg.model.kind == ModelKind::quadratic) {
                r.require(s.target_center.size() == cfg.model.quadratic.dim(), p, "target_center",
                          "needs one entry per quadratic coordinate");
            }
            break;
        }
    }
}

void check_model_requirements(Reader& r, const ExperimentConfig& cfg) {
    const auto kind = cfg.model.kind;
    const bool needs_quadratic = cfg.experiment == ExperimentKind::variance_check;
    const bool needs_mlp = cfg.experiment == ExperimentKind::diversity;
    const bool needs_any = cfg.experiment == ExperimentKind::train || cfg.experiment == ExperimentKind::flatness ||
                           cfg.experiment == ExperimentKind::shift_probe;
    if (needs_quadratic && kind != ModelKind::quadratic) {
        r.error("model", "variance-check needs a quadratic model");
    }
    if (needs_mlp && kind != ModelKind::mlp) {
        r.error("model", "diversity needs an mlp model");
    }
    if (needs_any && kind == ModelKind::none) {
        r.error("model", fmt::format("{} needs a model", to_string(cfg.experiment)));
    }
    const bool needs_optimizers = cfg.experiment == ExperimentKind::train || cfg.experiment == ExperimentKind::flatness;
    if (needs_optimizers && cfg.optimizers.empty()) {
        r.error("optimizers", "at least one optimizer is required");
    }
}

std::pair<std::size_t, std::size_t> line_col(std::string_view text, std::size_t byte) {
    std::size_t line = 1;
    std::size_t col = 1;
    for (std::size_t i = 0; i < byte && i < text.size(); ++i) {
        if (text[i] == '\n') {
            ++line;
            col = 1;
        } else {
            ++col;
        }
    }
    return {line, col};
}

}  // namespace

ConfigResult parse_config(std::string_view text, const ConfigOverrides& overrides, const std::string& base_dir) {
    ConfigResult result;
    json root;
    try {
        root = json::parse(text.begin(), text.end());
    } catch (const json::parse_error& e) {
        // e.byte is one past the offending character.
        const auto [line, col] = line_col(text, e.byte > 0 ? e.byte - 1 : 0);
        std::string what = e.what();
        if (const auto pos = what.find(": "); pos != std::string::npos) what = what.substr(pos + 2);
        result.diagnostics.push_back({fmt::format("line {}, column {}", line, col), "parse error: " + what});
        return result;
    }

    Reader r(result.diagnostics);
    if (!r.object(root, "")) return result;
    r.only_keys(root, "", {"experiment", "model", "optimizers", "seeds", "output_dir", "params"});

    if (overrides.seed_count) {
        json seeds = json::array();
        for (std::size_t i = 0; i < *overrides.seed_count; ++i) seeds.push_back(i);
        root["seeds"] = seeds;
    }

    ExperimentConfig cfg;
    const std::string name = r.string(root, "", "experiment", "");
    if (const auto kind = parse_experiment_kind(name)) {
        cfg.experiment = *kind;
    } else {
        r.error("experiment", name.empty() ? "required" : fmt::format("unknown experiment '{}'", name));
    }

    if (!root.contains("seeds") || !root.at("seeds").is_array()) {
        r.error("seeds", "required: a nonempty list of non-negative integers");
    } else {
        const json& seeds = root.at("seeds");
        if (seeds.empty()) r.error("seeds", "must be nonempty");
        std::set<std::uint64_t> seen;
        for (std::size_t i = 0; i < seeds.size(); ++i) {
            if (!seeds[i].is_number_unsigned()) {
                r.error(fmt::format("seeds[{}]", i), "expected a non-negative integer");
                continue;
            }
            const auto s = seeds[i].get<std::uint64_t>();
            if (!seen.insert(s).second) {
                r.error(fmt::format("seeds[{}]", i), fmt::format("duplicate seed {}", s));
            }
            cfg.seeds.push_back(s);
        }
    }

    parse_model(r, root, cfg.model, base_dir);

    if (root.contains("optimizers")) {
        const json& opts = root.at("optimizers");
        if (!opts.is_array()) {
            r.error("optimizers", "expected an array");
        } else {
            std::set<std::string> names;
            for (std::size_t i = 0; i < opts.size(); ++i) {
                const std::string p = fmt::format("optimizers[{}]", i);
                cfg.optimizers.push_back(parse_optimizer(r, opts[i], p));
                const auto& n = cfg.optimizers.back().name;
                if (!n.empty() && !names.insert(n).second) {
                    r.error(Reader::join(p, "name"), fmt::format("duplicate optimizer name '{}'", n));
                }
            }
        }
    }

    if (parse_experiment_kind(name)) {
        parse_params(r, root, cfg);
    }
    check_model_requirements(r, cfg);

    std::string out_dir = r.string(root, "", "output_dir", "");
    if (const char* env = std::getenv("FLATLAB_OUTPUT_DIR"); env && *env) out_dir = env;
    if (overrides.output_dir) out_dir = *overrides.output_dir;
    if (out_dir.empty()) out_dir = fmt::format("runs/{}", name.empty() ? "unnamed" : name);
    cfg.output_dir = out_dir;

    if (!result.diagnostics.empty()) return result;

    // The output location does not influence results, so it stays out of the hash.
    json canonical = root;
    canonical.erase("output_dir");
    cfg.canonical_json = canonical.dump();
    result.config = std::move(cfg);
    return result;
}

ConfigResult load_config(const std::string& path, const ConfigOverrides& overrides) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        ConfigResult result;
        result.diagnostics.push_back({path, "cannot read config file"});
        return result;
    }
    std::stringstream buf;
    buf << in.rdbuf();
    const auto dir = std::filesystem::path(path).parent_path();
    return parse_config(buf.str(), overrides, dir.empty() ? "." : dir.string());
}

std::string config_hash(const ExperimentConfig& config) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : config.canonical_json) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return fmt::format("{:016x}", h);
}

}  // namespace flatlab
