#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>

#include <fmt/format.h>
#include "CLI11.hpp"

#include "flatlab/config.hpp"
#include "flatlab/params.hpp"
#include "flatlab/runner.hpp"

namespace {

constexpr int kExitInvalid = 2;
constexpr int kExitSeedFailure = 3;
constexpr int kExitError = 4;

void print_diagnostics(const std::string& path, const flatlab::ConfigResult& result) {
    for (const auto& d : result.diagnostics) {
        std::cerr << fmt::format("{}: {}\n", path, flatlab::format_diagnostic(d));
    }
}

int cmd_validate(const std::string& path) {
    const auto result = flatlab::load_config(path);
    if (!result.ok()) {
        print_diagnostics(path, result);
        std::cerr << fmt::format("{} problem(s) found\n", result.diagnostics.size());
        return kExitInvalid;
    }
    std::cout << fmt::format("{}: ok ({}, {} seed(s), hash {})\n", path, flatlab::to_string(result.config->experiment),
                             result.config->seeds.size(), flatlab::config_hash(*result.config));
    return 0;
}

int cmd_run(const std::string& path, std::optional<std::size_t> seeds, std::optional<std::string> out,
            unsigned threads) {
    flatlab::ConfigOverrides overrides{seeds, out};
    const auto result = flatlab::load_config(path, overrides);
    if (!result.ok()) {
        print_diagnostics(path, result);
        return kExitInvalid;
    }
    const auto manifest = flatlab::run(*result.config, threads);
    for (const auto& s : manifest.seeds) {
        if (!s.success) {
            std::cerr << fmt::format("seed {}: failed: {}\n", s.seed, s.error);
        }
        for (const auto& d : s.divergences) {
            std::cerr << fmt::format("seed {}: diverged: {}\n", s.seed, d);
        }
    }
    std::cout << fmt::format("{}: {} seed(s) -> {} ({:.2f} s)\n", manifest.experiment, manifest.seeds.size(),
                             manifest.output_dir, manifest.wall_clock_seconds);
    return manifest.success ? 0 : kExitSeedFailure;
}

int cmd_inspect(const std::string& path) {
    const flatlab::ParamVec w = flatlab::load_checkpoint(path);
    const auto& layout = w.layout();
    const auto norms = flatlab::group_norms(w);
    std::cout << fmt::format("{}: {} group(s), {} parameter(s), |w| = {:.17g}\n", path, layout.group_count(),
                             layout.total_len(), flatlab::l2_norm(w));
    for (std::size_t g = 0; g < layout.group_count(); ++g) {
        const auto& group = layout.groups()[g];
        std::cout << fmt::format("  {:<24} {:>8}  norm {:.17g}\n", group.name, group.length, norms[g]);
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"flatlab: flatness and weight-interpolation experiments"};
    app.require_subcommand(1);
    app.set_version_flag("--version", std::string(flatlab::kToolVersion));

    std::string config_path;
    auto* validate = app.add_subcommand("validate", "check a config without running it");
    validate->add_option("config", config_path, "experiment config (JSON)")->required();

    std::string run_path;
    std::optional<std::size_t> seeds;
    std::optional<std::string> out_dir;
    unsigned threads = 0;
    auto* run = app.add_subcommand("run", "run an experiment");
    run->add_option("config", run_path, "experiment config (JSON)")->required();
    run->add_option("--seeds", seeds, "use seeds 0..N-1 instead of the config list")->check(CLI::PositiveNumber);
    run->add_option("--out", out_dir, "output directory (overrides config and FLATLAB_OUTPUT_DIR)");
    run->add_option("--threads", threads, "worker threads (default: hardware concurrency)");

    std::string ckpt_path;
    auto* inspect = app.add_subcommand("inspect", "summarize a checkpoint file");
    inspect->add_option("checkpoint", ckpt_path, "checkpoint (.fltw)")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (*validate) return cmd_validate(config_path);
        if (*run) return cmd_run(run_path, seeds, out_dir, threads);
        if (*inspect) return cmd_inspect(ckpt_path);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitError;
    }
    return EXIT_FAILURE;
}
