#include "flatlab/runner.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <thread>

#include <fmt/format.h>
#include "json.hpp"

#include "flatlab/csv.hpp"
#include "flatlab/error.hpp"
#include "flatlab/flatness.hpp"

namespace flatlab {

namespace fs = std::filesystem;

namespace {

constexpr std::uint64_t kMcTag = 0x6d6f6e7465ULL;
constexpr std::uint64_t kStabilityTag = 0x73746162ULL;
constexpr std::uint64_t kEntropyTag = 0x656e74ULL;
constexpr std::uint64_t kStreamTag = 0x73747265616dULL;
constexpr std::uint64_t kProbeTag = 0x70726f6265ULL;

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

// Per-seed rows reduced to (keys, metrics) for the cross-seed aggregate.
struct Summary {
    std::vector<std::string> key_columns;
    std::vector<std::string> metric_columns;
    std::vector<std::pair<std::vector<std::string>, std::vector<double>>> rows;

    void add(std::vector<std::string> keys, std::vector<double> metrics) {
        rows.emplace_back(std::move(keys), std::move(metrics));
    }
};

struct SeedWork {
    SeedOutcome outcome;
    Summary summary;
};

class SeedContext {
public:
    SeedContext(const ExperimentConfig& cfg, std::uint64_t seed, SeedOutcome& outcome)
        : cfg_(cfg), seed_(seed), outcome_(outcome) {}

    [[nodiscard]] std::uint64_t seed() const noexcept { return seed_; }
    [[nodiscard]] const ExperimentConfig& cfg() const noexcept { return cfg_; }

    [[nodiscard]] std::string name(std::string_view stem, std::string_view ext) const {
        return fmt::format("{}_seed{}.{}", stem, seed_, ext);
    }

    std::ofstream open(const std::string& file) {
        std::ofstream out(fs::path(cfg_.output_dir) / file, std::ios::binary | std::ios::trunc);
        if (!out) {
            throw Error(fmt::format("cannot write {}", (fs::path(cfg_.output_dir) / file).string()));
        }
        outcome_.files.push_back(file);
        return out;
    }

    void checkpoint(const std::string& file, const ParamVec& w) {
        save_checkpoint((fs::path(cfg_.output_dir) / file).string(), w);
        outcome_.files.push_back(file);
    }

    void divergence(const std::string& optimizer, const std::string& what) {
        outcome_.divergences.push_back(fmt::format("{}: {}", optimizer, what));
    }

private:
    const ExperimentConfig& cfg_;
    std::uint64_t seed_;
    SeedOutcome& outcome_;
};

std::string key(double v) { return format_real(v); }

// ---------------------------------------------------------------------------

void run_variance(SeedContext& ctx, Summary& summary) {
    const auto& cfg = ctx.cfg();
    const auto& p = cfg.variance;
    const QuadraticSpec& q = cfg.model.quadratic;
    const EnsembleConfig ens{p.eta, p.alpha, p.k, p.beta};
    const VarianceEstimate mc = monte_carlo_stationary_variance(
        q, ens, VarianceMcOptions{p.chains, p.burn_in, p.measured, derive_seed(ctx.seed(), kMcTag)});

    auto out = ctx.open(ctx.name("variance", "csv"));
    CsvWriter csv(out, {"coord", "h", "sigma2", "optimizer", "closed_form", "monte_carlo", "rel_err"});
    summary.key_columns = {"coord", "optimizer"};
    summary.metric_columns = {"closed_form", "monte_carlo", "rel_err"};
    for (std::size_t i = 0; i < q.dim(); ++i) {
        theory::ScalarChainSpec s;
        s.eta = p.eta;
        s.h = q.h[i];
        s.sigma2 = q.sigma2[i];
        s.alpha = p.alpha;
        s.k = p.k;
        s.beta = p.beta;
        auto guarded = [](auto f) {
            try {
                return f();
            } catch (const Error&) {
                return kNaN;  // no stationary variance
            }
        };
        const double erm = guarded([&] { return theory::v_star_erm(s.eta, s.h, s.sigma2); });
        const double la = guarded([&] { return theory::v_star_lookahead(s); });
        const double avg = guarded([&] { return theory::v_star_avglookahead(s); });
        const std::pair<const char*, std::pair<double, double>> rows[] = {
            {"erm", {erm, mc.sgd[i]}}, {"lookahead", {la, mc.lookahead[i]}}, {"avglookahead", {avg, mc.avg_lookahead[i]}}};
        for (const auto& [name, values] : rows) {
            const auto [closed, sim] = values;
            const double rel = std::abs(sim - closed) / std::abs(closed);
            csv.row(i, q.h[i], q.sigma2[i], name, closed, sim, rel);
            summary.add({std::to_string(i), name}, {closed, sim, rel});
        }
    }
}

void run_stability(SeedContext& ctx, Summary& summary) {
    StabilityMapOptions opt = ctx.cfg().stability;
    opt.seed = derive_seed(ctx.seed(), kStabilityTag);
    const auto rows = stability_map(opt);
    auto out = ctx.open(ctx.name("stability", "csv"));
    CsvWriter csv(out, {"alpha", "h", "sgd_stable", "paper_threshold_ok", "exact_stable", "mc_diverged",
                        "sgd_mc_diverged"});
    summary.key_columns = {"alpha", "h"};
    summary.metric_columns = {"sgd_stable", "paper_threshold_ok", "exact_stable", "mc_diverged", "sgd_mc_diverged"};
    for (const auto& r : rows) {
        csv.row(r.alpha, r.h, r.sgd_stable, r.paper_threshold_ok, r.exact_stable, r.mc_diverged, r.sgd_mc_diverged);
        summary.add({key(r.alpha), key(r.h)},
                    {double(r.sgd_stable), double(r.paper_threshold_ok), double(r.exact_stable), double(r.mc_diverged),
                     double(r.sgd_mc_diverged)});
    }
}

// Model-specific pieces shared by train, flatness and shift-probe.
struct ModelBundle {
    const ExperimentConfig* cfg = nullptr;
    std::uint64_t seed = 0;
    std::optional<DomainData> data;
    MlpSpec mlp;

    ModelBundle(const ExperimentConfig& c, std::uint64_t s) : cfg(&c), seed(s) {
        if (c.model.kind == ModelKind::mlp) {
            data = make_domain_data(c.model.domain);
            mlp = seeded_mlp(c.model.domain, s);
        }
    }

    [[nodiscard]] bool is_mlp() const { return cfg->model.kind == ModelKind::mlp; }

    [[nodiscard]] ParamVec initial() const {
        if (is_mlp()) {
            return cfg->model.init_checkpoint ? load_checkpoint(*cfg->model.init_checkpoint) : mlp_init(mlp);
        }
        const auto& q = cfg->model.quadratic;
        std::vector<double> w(q.dim());
        for (std::size_t i = 0; i < w.size(); ++i) w[i] = q.center_mean[i] + 1.0;
        return ParamVec(q.layout(), std::move(w));
    }

    // Every optimizer sees the same batch stream for a given seed.
    [[nodiscard]] std::unique_ptr<StochasticObjective> objective(const DomainDataset* train_on = nullptr) const {
        const std::uint64_t stream = derive_seed(seed, kStreamTag);
        if (is_mlp()) {
            return std::make_unique<MlpObjective>(mlp, train_on ? *train_on : data->source,
                                                  cfg->model.domain.batch_size, stream);
        }
        return std::make_unique<QuadraticObjective>(cfg->model.quadratic, stream);
    }

    [[nodiscard]] LossFn loss(const DomainDataset* on = nullptr) const {
        if (is_mlp()) return mlp_full_loss(mlp, on ? *on : data->source);
        const QuadraticSpec q = cfg->model.quadratic;
        return [q](const ParamVec& w) { return quad_loss(q, w, q.center_mean); };
    }

    [[nodiscard]] GradFn grad(const DomainDataset* on = nullptr) const {
        if (is_mlp()) return mlp_full_grad(mlp, on ? *on : data->source);
        const QuadraticSpec q = cfg->model.quadratic;
        return [q](const ParamVec& w) { return quad_loss_grad(q, w, q.center_mean).grad; };
    }

    [[nodiscard]] double accuracy(const ParamVec& w, bool target) const {
        if (!is_mlp()) return kNaN;
        return mlp_accuracy(mlp, w, target ? data->target : data->source_eval);
    }
};

TrainResult run_optimizer(SeedContext& ctx, const ModelBundle& model, const OptimizerSpec& spec, std::size_t steps,
                          std::size_t checkpoint_every) {
    auto objective = model.objective();
    TrainResult result = train(spec, *objective, model.initial(), TrainOptions{steps, ctx.seed(), checkpoint_every});
    if (result.diverged) ctx.divergence(spec.name, result.divergence);
    return result;
}

void run_train(SeedContext& ctx, Summary& summary) {
    const auto& cfg = ctx.cfg();
    const ModelBundle model(cfg, ctx.seed());
    const LossFn loss = model.loss();
    summary.key_columns = {"optimizer"};
    summary.metric_columns = {"final_loss", "source_acc", "target_acc", "diverged", "entropy_form_gap"};
    std::vector<std::vector<std::string>> rows;
    for (const auto& spec : cfg.optimizers) {
        const TrainResult r = run_optimizer(ctx, model, spec, cfg.train.steps, cfg.train.checkpoint_every);
        {
            auto out = ctx.open(ctx.name("trajectory_" + spec.name, "csv"));
            write_trajectory_csv(out, r.trajectory);
        }
        ctx.checkpoint(ctx.name("final_" + spec.name, "fltw"), r.final_weights);
        for (const auto& [step, w] : r.checkpoints) {
            ctx.checkpoint(fmt::format("ckpt_{}_seed{}_step{}.fltw", spec.name, ctx.seed(), step), w);
        }
        const double final_loss = r.final_weights.all_finite() ? loss(r.final_weights) : kNaN;
        const double src = r.final_weights.all_finite() ? model.accuracy(r.final_weights, false) : kNaN;
        const double tgt = r.final_weights.all_finite() ? model.accuracy(r.final_weights, true) : kNaN;
        rows.push_back({spec.name, format_real(final_loss), format_real(src), format_real(tgt),
                        r.diverged ? "1" : "0", format_real(r.max_entropy_form_gap)});
        summary.add({spec.name}, {final_loss, src, tgt, r.diverged ? 1.0 : 0.0, r.max_entropy_form_gap});
    }
    auto out = ctx.open(ctx.name("summary", "csv"));
    CsvWriter csv(out, {"optimizer", "final_loss", "source_acc", "target_acc", "diverged", "entropy_form_gap"});
    for (const auto& r : rows) csv.write_fields(r);
}

std::vector<double> linspace(double lo, double hi, std::size_t n) {
    std::vector<double> out(n);
    for (std::size_t i = 0; i < n; ++i) {
        out[i] = n == 1 ? lo : lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(n - 1);
    }
    return out;
}

void run_flatness(SeedContext& ctx, Summary& summary) {
    const auto& cfg = ctx.cfg();
    const auto& p = cfg.flatness;
    const ModelBundle model(cfg, ctx.seed());
    const DomainDataset* eval =
        model.is_mlp() && p.dataset == DatasetSelector::validation ? &model.data->source_eval : nullptr;
    const LossFn loss = model.loss(eval);
    const GradFn grad = model.grad(eval);

    summary.key_columns = {"optimizer", "perturb_strength"};
    summary.metric_columns = {"lambda_max", "base_loss", "mean_rel_increase", "max_rel_increase"};
    std::vector<std::vector<std::string>> rows;
    std::vector<NamedWeights> finals;
    const auto t_grid = linspace(-0.5, 1.5, p.interp_points);
    for (std::size_t oi = 0; oi < cfg.optimizers.size(); ++oi) {
        const auto& spec = cfg.optimizers[oi];
        const TrainResult r = run_optimizer(ctx, model, spec, p.steps, 0);
        const std::string ckpt = ctx.name("final_" + spec.name, "fltw");
        ctx.checkpoint(ckpt, r.final_weights);
        if (r.diverged || !r.final_weights.all_finite()) {
            for (double s : p.perturb_strengths) {
                rows.push_back({spec.name, format_real(s), format_real(kNaN), "0", format_real(kNaN),
                                format_real(kNaN), format_real(kNaN)});
                summary.add({spec.name, key(s)}, {kNaN, kNaN, kNaN, kNaN});
            }
            continue;
        }
        finals.push_back({spec.name, r.final_weights});
        PowerIterationOptions po;
        po.max_iters = p.power_iters;
        po.tol = p.power_tol;
        po.seed = derive_seed(ctx.seed(), kProbeTag + oi);
        const SpectrumReport spectrum = power_iteration_lambda_max(grad, r.final_weights, po);
        Rng probe_rng(derive_seed(ctx.seed(), kProbeTag ^ (oi + 1)));
        for (double s : p.perturb_strengths) {
            const PerturbationResult pr = perturbation_probe(loss, r.final_weights, s, p.perturb_samples, probe_rng);
            rows.push_back({spec.name, format_real(s), format_real(spectrum.lambda_max),
                            spectrum.converged ? "1" : "0", format_real(pr.base_loss),
                            format_real(pr.mean_rel_increase), format_real(pr.max_rel_increase)});
            summary.add({spec.name, key(s)},
                        {spectrum.lambda_max, pr.base_loss, pr.mean_rel_increase, pr.max_rel_increase});
        }
        const LandscapeGrid curve = interp_curve_1d(loss, r.initial, r.final_weights, t_grid);
        auto out = ctx.open(ctx.name("interp_" + spec.name, "csv"));
        write_landscape_csv(out, curve);
    }
    {
        auto out = ctx.open(ctx.name("flatness", "csv"));
        CsvWriter csv(out, {"optimizer", "perturb_strength", "lambda_max", "power_converged", "base_loss",
                            "mean_rel_increase", "max_rel_increase"});
        for (const auto& r : rows) csv.write_fields(r);
    }
    if (finals.size() >= 3) {
        const std::vector<NamedWeights> extra(finals.begin() + 3, finals.end());
        LandscapeGrid plane = plane_grid_2d(loss, finals[0].weights, finals[1].weights, finals[2].weights, p.plane,
                                            extra);
        plane.projected_points[0].name = finals[0].name;
        plane.projected_points[1].name = finals[1].name;
        plane.projected_points[2].name = finals[2].name;
        {
            auto out = ctx.open(ctx.name("plane", "csv"));
            write_landscape_csv(out, plane);
        }
        auto out = ctx.open(ctx.name("plane", "json"));
        out << landscape_sidecar_json(plane, ctx.name("final_" + finals[0].name, "fltw"));
    }
}

void run_diversity(SeedContext& ctx, Summary& summary) {
    const auto& cfg = ctx.cfg();
    const DomainData data = make_domain_data(cfg.model.domain);
    const auto rows = diversity_experiment(cfg.model.domain, data, cfg.diversity, ctx.seed());
    auto out = ctx.open(ctx.name("diversity", "csv"));
    CsvWriter csv(out, {"seed", "eta", "cka_in", "cka_out", "pred_div_in", "pred_div_out"});
    summary.key_columns = {"eta"};
    summary.metric_columns = {"cka_in", "cka_out", "pred_div_in", "pred_div_out"};
    for (const auto& r : rows) {
        csv.row(r.seed, r.eta, r.cka_in, r.cka_out, r.pred_div_in, r.pred_div_out);
        summary.add({key(r.eta)}, {r.cka_in, r.cka_out, r.pred_div_in, r.pred_div_out});
    }
}

void run_entropy(SeedContext& ctx, Summary& summary) {
    EntropyCheckOptions opt = ctx.cfg().entropy;
    opt.seed = derive_seed(ctx.seed(), kEntropyTag);
    const auto rows = entropy_check(opt);
    auto out = ctx.open(ctx.name("entropy", "csv"));
    CsvWriter csv(out, {"query", "gamma", "fd_rel_err", "fixed_point_grad", "fixed_point_iters", "sampler_mean_err"});
    summary.key_columns = {"query"};
    summary.metric_columns = {"fd_rel_err", "fixed_point_grad", "sampler_mean_err"};
    for (const auto& r : rows) {
        csv.row(r.query, r.gamma, r.fd_rel_err, r.fixed_point_grad, r.fixed_point_iters, r.sampler_mean_err);
        summary.add({std::to_string(r.query)}, {r.fd_rel_err, r.fixed_point_grad, r.sampler_mean_err});
    }
}

void run_shift(SeedContext& ctx, Summary& summary) {
    const auto& cfg = ctx.cfg();
    const auto& p = cfg.shift;
    const ModelBundle model(cfg, ctx.seed());
    const auto t_grid = linspace(p.t_min, p.t_max, p.n_t);
    ShiftProbe probe;
    if (model.is_mlp()) {
        OptimizerSpec spec = cfg.optimizers.empty() ? OptimizerSpec{} : cfg.optimizers.front();
        if (cfg.optimizers.empty()) {
            spec.name = "erm";
            spec.inner = InnerOptConfig{InnerKind::adam, 5e-3};
        }
        const ParamVec init = model.initial();
        auto source_obj = model.objective(&model.data->source);
        auto target_obj = model.objective(&model.data->target);
        const TrainResult src = train(spec, *source_obj, init, TrainOptions{p.steps, ctx.seed(), 0});
        const TrainResult tgt = train(spec, *target_obj, init, TrainOptions{p.steps, ctx.seed(), 0});
        if (src.diverged) ctx.divergence(spec.name + "/source", src.divergence);
        if (tgt.diverged) ctx.divergence(spec.name + "/target", tgt.divergence);
        ctx.checkpoint(ctx.name("source", "fltw"), src.final_weights);
        ctx.checkpoint(ctx.name("target", "fltw"), tgt.final_weights);
        probe = shifted_loss_probe(model.loss(&model.data->source), model.loss(&model.data->target),
                                   src.final_weights, tgt.final_weights, t_grid);
    } else {
        const QuadraticSpec source = cfg.model.quadratic;
        QuadraticSpec target = source;
        target.center_mean = p.target_center;
        const auto layout = source.layout();
        auto loss_s = [source](const ParamVec& w) { return quad_loss(source, w, source.center_mean); };
        auto loss_t = [target](const ParamVec& w) { return quad_loss(target, w, target.center_mean); };
        probe = shifted_loss_probe(loss_s, loss_t, ParamVec(layout, source.center_mean),
                                   ParamVec(layout, target.center_mean), t_grid);
    }
    auto out = ctx.open(ctx.name("shift", "csv"));
    CsvWriter csv(out, {"t", "train", "test", "shifted", "abs_gap"});
    summary.key_columns = {"t"};
    summary.metric_columns = {"train", "test", "shifted", "abs_gap"};
    for (std::size_t i = 0; i < probe.t.size(); ++i) {
        const double gap = std::abs(probe.shifted[i] - probe.test[i]);
        csv.row(probe.t[i], probe.train[i], probe.test[i], probe.shifted[i], gap);
        summary.add({key(probe.t[i])}, {probe.train[i], probe.test[i], probe.shifted[i], gap});
    }
}

SeedWork run_seed(const ExperimentConfig& cfg, std::uint64_t seed) {
    SeedWork work;
    work.outcome.seed = seed;
    const auto start = std::chrono::steady_clock::now();
    SeedContext ctx(cfg, seed, work.outcome);
    try {
        switch (cfg.experiment) {
            case ExperimentKind::variance_check: run_variance(ctx, work.summary); break;
            case ExperimentKind::stability_map: run_stability(ctx, work.summary); break;
            case ExperimentKind::train: run_train(ctx, work.summary); break;
            case ExperimentKind::flatness: run_flatness(ctx, work.summary); break;
            case ExperimentKind::diversity: run_diversity(ctx, work.summary); break;
            case ExperimentKind::entropy_check: run_entropy(ctx, work.summary); break;
            case ExperimentKind::shift_probe: run_shift(ctx, work.summary); break;
        }
        work.outcome.success = true;
    } catch (const std::exception& e) {
        work.outcome.success = false;
        work.outcome.error = e.what();
        work.summary.rows.clear();
    }
    work.outcome.wall_clock_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return work;
}

// Median / IQR over seeds. Works on seed-sorted input so the fold never
// depends on the order seeds were listed or finished in.
void write_aggregate(std::ostream& out, std::vector<const SeedWork*> works) {
    std::sort(works.begin(), works.end(),
              [](const SeedWork* a, const SeedWork* b) { return a->outcome.seed < b->outcome.seed; });
    const Summary* shape = nullptr;
    for (const auto* w : works) {
        if (w->outcome.success && !w->summary.key_columns.empty()) {
            shape = &w->summary;
            break;
        }
    }
    std::vector<std::string> columns = shape ? shape->key_columns : std::vector<std::string>{};
    for (const char* c : {"metric", "median", "q25", "q75", "n"}) columns.emplace_back(c);
    CsvWriter csv(out, columns);
    if (!shape) return;

    std::vector<std::vector<std::string>> order;
    std::map<std::vector<std::string>, std::vector<std::vector<double>>> values;
    for (const auto* w : works) {
        if (!w->outcome.success) continue;
        for (const auto& [keys, metrics] : w->summary.rows) {
            auto it = values.find(keys);
            if (it == values.end()) {
                order.push_back(keys);
                it = values.emplace(keys, std::vector<std::vector<double>>(shape->metric_columns.size())).first;
            }
            for (std::size_t m = 0; m < metrics.size(); ++m) {
                if (std::isfinite(metrics[m])) it->second[m].push_back(metrics[m]);
            }
        }
    }
    for (const auto& keys : order) {
        const auto& per_metric = values.at(keys);
        for (std::size_t m = 0; m < shape->metric_columns.size(); ++m) {
            const auto& v = per_metric[m];
            std::vector<std::string> fields = keys;
            fields.push_back(shape->metric_columns[m]);
            fields.push_back(format_real(v.empty() ? kNaN : median(v)));
            fields.push_back(format_real(v.empty() ? kNaN : quantile(v, 0.25)));
            fields.push_back(format_real(v.empty() ? kNaN : quantile(v, 0.75)));
            fields.push_back(std::to_string(v.size()));
            csv.write_fields(fields);
        }
    }
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(fmt::format("cannot write {}", path.string()));
    out << text;
}

}  // namespace

RunManifest run(const ExperimentConfig& config, unsigned max_threads) {
    const auto start = std::chrono::steady_clock::now();
    fs::create_directories(config.output_dir);

    std::vector<SeedWork> works(config.seeds.size());
    unsigned threads = max_threads > 0 ? max_threads : std::max(1u, std::thread::hardware_concurrency());
    threads = std::min<unsigned>(threads, static_cast<unsigned>(config.seeds.size()));
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t i = next++; i < works.size(); i = next++) {
            works[i] = run_seed(config, config.seeds[i]);
        }
    };
    std::vector<std::thread> pool;
    for (unsigned t = 1; t < threads; ++t) pool.emplace_back(worker);
    worker();
    for (auto& t : pool) t.join();

    RunManifest manifest;
    manifest.tool_version = std::string(kToolVersion);
    manifest.config_hash = config_hash(config);
    manifest.experiment = std::string(to_string(config.experiment));
    manifest.output_dir = config.output_dir;
    manifest.aggregate_file = "aggregate.csv";
    manifest.success = true;
    std::vector<const SeedWork*> ptrs;
    for (const auto& w : works) {
        manifest.seeds.push_back(w.outcome);
        manifest.success = manifest.success && w.outcome.success;
        ptrs.push_back(&w);
    }
    {
        std::ofstream out(fs::path(config.output_dir) / manifest.aggregate_file, std::ios::binary | std::ios::trunc);
        if (!out) throw Error("cannot write aggregate.csv");
        write_aggregate(out, ptrs);
    }
    manifest.wall_clock_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    write_text(fs::path(config.output_dir) / "manifest.json", manifest_json(manifest));
    write_text(fs::path(config.output_dir) / "timing.json", timing_json(manifest));
    return manifest;
}

std::string manifest_json(const RunManifest& manifest) {
    nlohmann::ordered_json j;
    j["tool_version"] = manifest.tool_version;
    j["config_hash"] = manifest.config_hash;
    j["experiment"] = manifest.experiment;
    j["success"] = manifest.success;
    j["aggregate"] = manifest.aggregate_file;
    j["timing"] = "timing.json";
    auto seeds = nlohmann::ordered_json::array();
    for (const auto& s : manifest.seeds) {
        nlohmann::ordered_json e;
        e["seed"] = s.seed;
        e["success"] = s.success;
        if (!s.error.empty()) e["error"] = s.error;
        e["divergences"] = s.divergences;
        e["files"] = s.files;
        seeds.push_back(std::move(e));
    }
    j["seeds"] = std::move(seeds);
    return j.dump(2) + "\n";
}

std::string timing_json(const RunManifest& manifest) {
    nlohmann::ordered_json j;
    j["wall_clock_seconds"] = manifest.wall_clock_seconds;
    auto seeds = nlohmann::ordered_json::array();
    for (const auto& s : manifest.seeds) {
        seeds.push_back({{"seed", s.seed}, {"wall_clock_seconds", s.wall_clock_seconds}});
    }
    j["seeds"] = std::move(seeds);
    return j.dump(2) + "\n";
}

}  // namespace flatlab
