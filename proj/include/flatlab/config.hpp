#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "flatlab/experiments.hpp"
#include "flatlab/flatness.hpp"

namespace flatlab {

inline constexpr std::string_view kToolVersion = "0.3.0";

enum class ExperimentKind { variance_check, stability_map, train, flatness, diversity, entropy_check, shift_probe };

[[nodiscard]] std::string_view to_string(ExperimentKind kind) noexcept;
[[nodiscard]] std::optional<ExperimentKind> parse_experiment_kind(std::string_view name) noexcept;

enum class ModelKind { none, quadratic, mlp };

struct ModelConfig {
    ModelKind kind = ModelKind::none;
    QuadraticSpec quadratic;
    DomainTask domain;
    std::optional<std::string> init_checkpoint;  // mlp only; resolved path
};

struct VarianceParams {
    double eta = 5e-4;
    double alpha = 0.05;
    std::size_t k = 15;
    std::vector<double> beta;
    std::size_t chains = 50000;
    std::size_t burn_in = 500;
    std::size_t measured = 500;
};

struct TrainParams {
    std::size_t steps = 1500;  // gradient steps per optimizer
    std::size_t checkpoint_every = 0;
};

enum class DatasetSelector { train, validation };

struct FlatnessParams {
    std::size_t steps = 1500;
    std::size_t power_iters = 200;
    double power_tol = 1e-6;
    std::vector<double> perturb_strengths{0.01, 0.05, 0.1};
    std::size_t perturb_samples = 20;
    std::size_t interp_points = 41;
    PlaneGridSpec plane;
    DatasetSelector dataset = DatasetSelector::train;
};

struct ShiftParams {
    double t_min = -0.5;
    double t_max = 1.5;
    std::size_t n_t = 41;
    std::size_t steps = 1500;
    std::vector<double> target_center;  // quadratic model
};

struct ExperimentConfig {
    ExperimentKind experiment = ExperimentKind::train;
    ModelConfig model;
    std::vector<OptimizerSpec> optimizers;
    std::vector<std::uint64_t> seeds;
    std::string output_dir;

    VarianceParams variance;
    StabilityMapOptions stability;
    TrainParams train;
    FlatnessParams flatness;
    DiversityOptions diversity;
    EntropyCheckOptions entropy;
    ShiftParams shift;

    std::string canonical_json;  // after overrides; hashed into the manifest
};

struct Diagnostic {
    std::string path;  // field path such as optimizers[1].beta, or "line 3, column 7"
    std::string message;
};

[[nodiscard]] std::string format_diagnostic(const Diagnostic& d);

struct ConfigOverrides {
    std::optional<std::size_t> seed_count;  // seeds become 0 .. N-1
    std::optional<std::string> output_dir;
};

struct ConfigResult {
    std::optional<ExperimentConfig> config;
    std::vector<Diagnostic> diagnostics;

    [[nodiscard]] bool ok() const noexcept { return config.has_value() && diagnostics.empty(); }
};

/// Parses and validates a JSON document. Every violation is reported; the
/// config is only returned when there are none. Relative checkpoint paths are
/// resolved against `base_dir`.
[[nodiscard]] ConfigResult parse_config(std::string_view text, const ConfigOverrides& overrides = {},
                                        const std::string& base_dir = ".");
/// Reads `path` and calls parse_config; unreadable files yield a diagnostic.
[[nodiscard]] ConfigResult load_config(const std::string& path, const ConfigOverrides& overrides = {});

/// FNV-1a 64 of the canonical JSON, as 16 hex digits.
[[nodiscard]] std::string config_hash(const ExperimentConfig& config);

}  // namespace flatlab
