#include <cstdlib>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "json.hpp"

#include "flatlab/runner.hpp"
#include "helpers.hpp"

using namespace flatlab;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

ExperimentConfig config(const std::string& text, const fs::path& out) {
    const auto r = parse_config(text, {std::nullopt, out.string()});
    for (const auto& d : r.diagnostics) INFO(format_diagnostic(d));
    REQUIRE(r.ok());
    return *r.config;
}

const char* kLattice = R"({"experiment": "train", "seeds": [0, 1],
  "model": {"kind": "quadratic", "h": [0.5, 1, 4], "sigma2": [1, 1, 1]},
  "optimizers": [
    {"name": "erm", "type": "erm", "inner": {"kind": "adam", "eta": 0.01}},
    {"name": "identity", "type": "lookahead", "inner": {"kind": "adam", "eta": 0.01}, "alpha": 1, "k": 1},
    {"name": "plain", "type": "lookahead", "inner": {"kind": "sgd", "eta": 0.05}, "alpha": 0.5, "k": 1},
    {"name": "avg", "type": "lookahead", "variant": "avg", "inner": {"kind": "sgd", "eta": 0.05}, "alpha": 0.5, "k": 1},
    {"name": "plain5", "type": "lookahead", "inner": {"kind": "sgd", "eta": 0.05}, "alpha": 0.5, "k": 5},
    {"name": "reg0", "type": "lookahead", "variant": "reg", "inner": {"kind": "sgd", "eta": 0.05}, "alpha": 0.5,
     "k": 5, "lambda": 0}
  ],
  "params": {"steps": 100, "checkpoint_every": 50}})";

}  // namespace

TEST_SUITE("runner") {

TEST_CASE("reduction lattice through the runner") {
    const auto dir = testing::scratch("runner_lattice");
    const auto m = run(config(kLattice, dir), 2);
    REQUIRE(m.success);
    for (const char* seed : {"0", "1"}) {
        const std::string s = seed;
        CHECK(slurp(dir / ("trajectory_erm_seed" + s + ".csv")) ==
              slurp(dir / ("trajectory_identity_seed" + s + ".csv")));
        CHECK(slurp(dir / ("trajectory_plain_seed" + s + ".csv")) == slurp(dir / ("trajectory_avg_seed" + s + ".csv")));
        CHECK(slurp(dir / ("trajectory_plain5_seed" + s + ".csv")) ==
              slurp(dir / ("trajectory_reg0_seed" + s + ".csv")));
        CHECK(slurp(dir / ("final_erm_seed" + s + ".fltw")) == slurp(dir / ("final_identity_seed" + s + ".fltw")));
    }
    // erm and plain5 see different step counts but the same batch stream
    CHECK(slurp(dir / "trajectory_erm_seed0.csv") != slurp(dir / "trajectory_erm_seed1.csv"));
}

TEST_CASE("manifest lists files that exist") {
    const auto dir = testing::scratch("runner_manifest");
    const auto m = run(config(kLattice, dir), 1);
    REQUIRE(m.success);
    const auto j = nlohmann::json::parse(slurp(dir / "manifest.json"));
    CHECK(j.at("tool_version") == std::string(kToolVersion));
    CHECK(j.at("config_hash").get<std::string>().size() == 16);
    for (const auto& seed : j.at("seeds")) {
        CHECK(seed.at("success").get<bool>());
        for (const auto& f : seed.at("files")) CHECK(fs::exists(dir / f.get<std::string>()));
    }
    CHECK(fs::exists(dir / "aggregate.csv"));
    CHECK(fs::exists(dir / "timing.json"));
    CHECK(slurp(dir / "manifest.json").find("wall_clock") == std::string::npos);
}

TEST_CASE("reruns are byte identical") {
    const auto a = testing::scratch("runner_det_a");
    const auto b = testing::scratch("runner_det_b");
    run(config(kLattice, a), 3);
    run(config(kLattice, b), 1);
    std::size_t compared = 0;
    for (const auto& entry : fs::directory_iterator(a)) {
        const auto name = entry.path().filename();
        if (name == "timing.json") continue;
        INFO(name.string());
        REQUIRE(fs::exists(b / name));
        if (name == "manifest.json") {
            auto ja = nlohmann::json::parse(slurp(entry.path()));
            auto jb = nlohmann::json::parse(slurp(b / name));
            ja.erase("output_dir");
            jb.erase("output_dir");
            CHECK(ja == jb);
        } else {
            CHECK(slurp(entry.path()) == slurp(b / name));
        }
        ++compared;
    }
    CHECK(compared > 10);
}

TEST_CASE("aggregate does not depend on seed order") {
    const char* tmpl = R"({"experiment": "entropy-check", "seeds": SEEDS,
        "params": {"n_queries": 5, "dim": 3, "sampler_steps": 2000}})";
    auto make = [&](const std::string& seeds, const fs::path& dir) {
        std::string t = tmpl;
        t.replace(t.find("SEEDS"), 5, seeds);
        return config(t, dir);
    };
    const auto a = testing::scratch("runner_perm_a");
    const auto b = testing::scratch("runner_perm_b");
    REQUIRE(run(make("[0, 1, 2]", a), 2).success);
    REQUIRE(run(make("[2, 0, 1]", b), 2).success);
    CHECK(slurp(a / "aggregate.csv") == slurp(b / "aggregate.csv"));
    CHECK(slurp(a / "entropy_seed2.csv") == slurp(b / "entropy_seed2.csv"));
}

TEST_CASE("FLATLAB_OUTPUT_DIR selects the directory") {
    const auto dir = testing::scratch("runner_env");
    ::setenv("FLATLAB_OUTPUT_DIR", dir.string().c_str(), 1);
    const auto r = parse_config(R"({"experiment": "entropy-check", "seeds": [0], "output_dir": "elsewhere",
        "params": {"n_queries": 2, "dim": 2, "sampler_steps": 100}})");
    ::unsetenv("FLATLAB_OUTPUT_DIR");
    REQUIRE(r.ok());
    const auto m = run(*r.config, 1);
    CHECK(m.success);
    CHECK(fs::exists(dir / "entropy_seed0.csv"));
}

TEST_CASE("every experiment kind runs on a small config") {
    const std::vector<std::pair<std::string, std::string>> cases{
        {"variance", R"({"experiment": "variance-check", "seeds": [0], "model": {"kind": "quadratic", "h": [1, 2]},
            "params": {"eta": 0.1, "alpha": 0.5, "k": 3, "chains": 200, "burn_in": 10, "measured": 10}})"},
        {"stability", R"({"experiment": "stability-map", "seeds": [0],
            "params": {"n_h": 5, "steps": 500}})"},
        {"flatness", R"({"experiment": "flatness", "seeds": [0],
            "model": {"kind": "mlp", "layer_sizes": [2, 4, 4], "n_per_domain": 64, "batch_size": 16},
            "optimizers": [{"name": "a", "type": "erm", "inner": {"kind": "sgd", "eta": 0.1}},
                           {"name": "b", "type": "sam", "inner": {"kind": "sgd", "eta": 0.1}},
                           {"name": "c", "type": "swa", "inner": {"kind": "sgd", "eta": 0.1}, "swa_start": 10}],
            "params": {"steps": 30, "power_iters": 20, "perturb_samples": 3, "interp_points": 5,
                       "plane": {"nx": 3, "ny": 3}}})"},
        {"diversity", R"({"experiment": "diversity", "seeds": [0, 1],
            "model": {"kind": "mlp", "layer_sizes": [2, 6, 4], "n_per_domain": 64, "batch_size": 16}})"},
        {"shift", R"({"experiment": "shift-probe", "seeds": [0],
            "model": {"kind": "quadratic", "h": [1, 2]},
            "optimizers": [{"name": "a", "type": "erm", "inner": {"kind": "sgd", "eta": 0.1}}],
            "params": {"n_t": 5, "steps": 20, "target_center": [0.5, 0.5]}})"},
    };
    for (const auto& [name, text] : cases) {
        INFO(name);
        const auto dir = testing::scratch("runner_kind_" + name);
        const auto m = run(config(text, dir), 2);
        for (const auto& s : m.seeds) INFO(s.error);
        CHECK(m.success);
        CHECK(fs::exists(dir / "aggregate.csv"));
        CHECK(fs::exists(dir / "manifest.json"));
    }
}

}  // TEST_SUITE
