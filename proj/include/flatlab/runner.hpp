#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "flatlab/config.hpp"

namespace flatlab {

struct SeedOutcome {
    std::uint64_t seed = 0;
    bool success = false;
    std::string error;
    std::vector<std::string> files;        // relative to the output directory
    std::vector<std::string> divergences;  // "<optimizer>: <message>"
    double wall_clock_seconds = 0.0;
};

struct RunManifest {
    std::string tool_version;
    std::string config_hash;
    std::string experiment;
    std::string output_dir;
    std::vector<SeedOutcome> seeds;  // config order
    std::string aggregate_file;
    double wall_clock_seconds = 0.0;
    bool success = false;
};

/// Executes the configured experiment for every seed (in parallel), writes
/// per-seed CSVs, aggregate.csv, manifest.json and timing.json. Everything
/// except timing.json is a pure function of the config.
RunManifest run(const ExperimentConfig& config, unsigned max_threads = 0);

/// manifest.json contents (no wall-clock values).
[[nodiscard]] std::string manifest_json(const RunManifest& manifest);
/// timing.json contents.
[[nodiscard]] std::string timing_json(const RunManifest& manifest);

}  // namespace flatlab
