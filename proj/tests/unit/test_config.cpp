#include <cstdlib>
#include <fstream>

#include "doctest.h"

#include "flatlab/config.hpp"
#include "flatlab/params.hpp"
#include "helpers.hpp"

using namespace flatlab;

namespace {

bool has_path(const ConfigResult& r, const std::string& path) {
    for (const auto& d : r.diagnostics) {
        if (d.path == path) return true;
    }
    return false;
}

const char* kMinimal = R"({"experiment": "entropy-check", "seeds": [0]})";

}  // namespace

TEST_SUITE("config") {

TEST_CASE("shipped table 2 defaults validate cleanly") {
    const auto r = load_config(std::string(FLATLAB_SOURCE_DIR) + "/configs/table2_defaults.json");
    CHECK(r.diagnostics.empty());
    REQUIRE(r.ok());
    const auto& c = *r.config;
    REQUIRE(c.optimizers.size() == 4);
    const auto& la = c.optimizers[1].lookahead;
    CHECK(la.inner.eta == 5e-4);
    CHECK(la.alpha == 0.05);
    CHECK(la.k == 15);
    const auto& reg = c.optimizers[3].lookahead;
    CHECK(reg.lambda == 0.01);
    CHECK(reg.history_window == 10);
}

TEST_CASE("every shipped config validates") {
    for (const char* name : {"variance_check", "stability_map", "lattice", "flatness", "diversity", "entropy_check",
                             "shift_probe"}) {
        const auto r = load_config(std::string(FLATLAB_SOURCE_DIR) + "/configs/" + name + ".json");
        INFO(name);
        for (const auto& d : r.diagnostics) INFO(format_diagnostic(d));
        CHECK(r.ok());
    }
}

TEST_CASE("lookahead defaults follow the optimizer defaults") {
    const auto r = parse_config(R"({"experiment": "train", "seeds": [1], "model": {"kind": "quadratic", "h": [1]},
        "optimizers": [{"name": "la", "type": "lookahead"}]})");
    REQUIRE(r.ok());
    const auto& la = r.config->optimizers[0].lookahead;
    CHECK(la.inner.kind == InnerKind::adam);
    CHECK(la.inner.eta == 5e-4);
    CHECK(la.alpha == 0.05);
    CHECK(la.k == 15);
}

TEST_CASE("beta that does not sum to one names the field") {
    const auto r = parse_config(R"({"experiment": "train", "seeds": [0], "model": {"kind": "quadratic", "h": [1]},
        "optimizers": [{"name": "a", "type": "lookahead", "variant": "avg", "k": 2, "beta": [0.5, 0.6]}]})");
    CHECK_FALSE(r.ok());
    REQUIRE(has_path(r, "optimizers[0].beta"));
}

TEST_CASE("seed list checks") {
    CHECK(has_path(parse_config(R"({"experiment": "entropy-check", "seeds": []})"), "seeds"));
    CHECK(has_path(parse_config(R"({"experiment": "entropy-check"})"), "seeds"));
    const auto dup = parse_config(R"({"experiment": "entropy-check", "seeds": [3, 4, 3]})");
    CHECK(has_path(dup, "seeds[2]"));
    CHECK(has_path(parse_config(R"({"experiment": "entropy-check", "seeds": [-1]})"), "seeds[0]"));
}

TEST_CASE("parse errors carry a position") {
    const auto r = parse_config("{\n  \"experiment\": \"train\",\n  \"seeds\": [0,,1]\n}");
    REQUIRE(r.diagnostics.size() == 1);
    CHECK(r.diagnostics[0].path.rfind("line 3, column ", 0) == 0);
    CHECK(format_diagnostic(r.diagnostics[0]).find("parse error") != std::string::npos);
}

TEST_CASE("unknown fields and bad enums are reported together") {
    const auto r = parse_config(R"({"experiment": "train", "seeds": [0], "colour": 1,
        "model": {"kind": "quadratic", "h": [1], "shape": 2},
        "optimizers": [{"name": "x", "type": "adamw"}, {"name": "y", "type": "erm", "inner": {"kind": "rmsprop"}}]})");
    CHECK(has_path(r, "colour"));
    CHECK(has_path(r, "model.shape"));
    CHECK(has_path(r, "optimizers[0].type"));
    CHECK(has_path(r, "optimizers[1].inner.kind"));
    CHECK(has_path(parse_config(R"({"experiment": "nope", "seeds": [0]})"), "experiment"));
}

TEST_CASE("model requirements per experiment") {
    CHECK(has_path(parse_config(R"({"experiment": "variance-check", "seeds": [0]})"), "model"));
    CHECK(has_path(parse_config(R"({"experiment": "diversity", "seeds": [0],
        "model": {"kind": "quadratic", "h": [1]}})"),
                   "model"));
    CHECK(has_path(parse_config(R"({"experiment": "train", "seeds": [0],
        "model": {"kind": "quadratic", "h": [1]}})"),
                   "optimizers"));
}

TEST_CASE("diversity pretraining options") {
    const auto r = parse_config(R"({"experiment": "diversity", "seeds": [0], "model": {"kind": "mlp"},
        "params": {"pretrain_steps": 0, "pretrain": {"kind": "sgd", "eta": 0.2}}})");
    REQUIRE(r.ok());
    CHECK(r.config->diversity.pretrain_steps == 0);
    CHECK(r.config->diversity.pretrain.kind == InnerKind::sgd);
    CHECK(r.config->diversity.pretrain.eta == 0.2);
    CHECK(has_path(parse_config(R"({"experiment": "diversity", "seeds": [0], "model": {"kind": "mlp"},
        "params": {"pretrain": {"eta": -1}}})"),
                   "params.pretrain.eta"));
}

TEST_CASE("duplicate optimizer names") {
    const auto r = parse_config(R"({"experiment": "train", "seeds": [0], "model": {"kind": "quadratic", "h": [1]},
        "optimizers": [{"name": "a", "type": "erm"}, {"name": "a", "type": "sam"}]})");
    CHECK(has_path(r, "optimizers[1].name"));
}

TEST_CASE("init checkpoint must exist and match the network") {
    const auto dir = testing::scratch("config_ckpt");
    const auto missing = parse_config(R"({"experiment": "train", "seeds": [0],
        "model": {"kind": "mlp", "layer_sizes": [2, 3, 4], "init_checkpoint": "nope.fltw"},
        "optimizers": [{"name": "a", "type": "erm"}]})",
                                      {}, dir.string());
    CHECK(has_path(missing, "model.init_checkpoint"));

    MlpSpec spec{{2, 3, 4}, Activation::tanh, 0, 1.0};
    save_checkpoint((dir / "good.fltw").string(), mlp_init(spec));
    save_checkpoint((dir / "bad.fltw").string(), ParamVec(GroupLayout::single("theta", 5)));
    const std::string tmpl = R"({"experiment": "train", "seeds": [0],
        "model": {"kind": "mlp", "layer_sizes": [2, 3, 4], "init_checkpoint": "FILE"},
        "optimizers": [{"name": "a", "type": "erm"}]})";
    auto with = [&](const std::string& file) {
        std::string t = tmpl;
        t.replace(t.find("FILE"), 4, file);
        return parse_config(t, {}, dir.string());
    };
    const auto good = with("good.fltw");
    CHECK(good.ok());
    REQUIRE(good.config->model.init_checkpoint);
    CHECK(*good.config->model.init_checkpoint == (dir / "good.fltw").string());
    CHECK(has_path(with("bad.fltw"), "model.init_checkpoint"));
}

TEST_CASE("overrides and output directory precedence") {
    const auto base = parse_config(kMinimal);
    REQUIRE(base.ok());
    CHECK(base.config->output_dir == "runs/entropy-check");

    const auto seeds = parse_config(kMinimal, {std::size_t{4}, std::nullopt});
    REQUIRE(seeds.ok());
    CHECK(seeds.config->seeds == std::vector<std::uint64_t>{0, 1, 2, 3});
    CHECK(config_hash(*seeds.config) != config_hash(*base.config));

    const auto in_file = parse_config(R"({"experiment": "entropy-check", "seeds": [0], "output_dir": "a"})");
    CHECK(in_file.config->output_dir == "a");
    CHECK(config_hash(*in_file.config) == config_hash(*base.config));

    ::setenv("FLATLAB_OUTPUT_DIR", "from_env", 1);
    const auto env = parse_config(R"({"experiment": "entropy-check", "seeds": [0], "output_dir": "a"})");
    const auto flag = parse_config(kMinimal, {std::nullopt, std::string("b")});
    ::unsetenv("FLATLAB_OUTPUT_DIR");
    CHECK(env.config->output_dir == "from_env");
    CHECK(flag.config->output_dir == "b");
}

TEST_CASE("hash is stable and sixteen hex digits") {
    const auto a = parse_config(kMinimal);
    const auto b = parse_config(kMinimal);
    const auto h = config_hash(*a.config);
    CHECK(h == config_hash(*b.config));
    CHECK(h.size() == 16);
    CHECK(h.find_first_not_of("0123456789abcdef") == std::string::npos);
}

TEST_CASE("unreadable file") {
    const auto r = load_config("/nonexistent/config.json");
    CHECK_FALSE(r.ok());
    REQUIRE(r.diagnostics.size() == 1);
}

}  // TEST_SUITE
