#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "reachguard/dynamics.hpp"
#include "reachguard/fallback.hpp"
#include "reachguard/levelset.hpp"
#include "reachguard/nrt.hpp"
#include "reachguard/sensor.hpp"
#include "reachguard/vbc.hpp"

namespace reachguard {

struct VbcSection {
    std::size_t corpus_size = 6000;
    std::size_t eval_size = 1000;
    std::vector<std::uint32_t> hidden{64, 64};
    TrainHyper train{1e-3, 40, 64, 1};
    TrainHyper retrain{3e-4, 10, 64, 1};
    double upsample_fraction = 0.3;
};

struct MiningSection {
    std::size_t samples = 18000;
    std::size_t max_traces = 50;
    double error_threshold = 0.45;
};

struct FdSection {
    std::vector<std::uint32_t> hidden{64, 64};
    TrainHyper train{1e-3, 30, 64, 1};
    double alpha = 0.05;
};

struct FallbackSection {
    FallbackMode mode;
    // Initial-state lattice for the unsafe-fraction comparison.
    std::uint32_t px_count = 11;
    std::uint32_t py_count = 5;
    std::uint32_t theta_count = 7;
};

struct PipelineConfig {
    PlantConfig plant;
    CameraConfig camera;
    std::vector<RunwayProfile> runways = runway_catalog();
    GridSpec grid = GridSpec::defaults();
    double horizon = 10.0;
    VbcSection vbc;
    NrtHyper nrt;
    MiningSection mining;
    FdSection fd;
    FallbackSection fallback;
    EnvParams benchmark{TimeOfDay::morning, Cloud::clear, 0};
    std::uint64_t seed = 1;
    std::string output = "run";

    void validate() const;
    Sensor sensor() const;
    // Conditions solved and learned for the benchmark runway.
    std::vector<EnvParams> tube_envs() const { return all_conditions(benchmark.runway_id); }
    std::uint64_t stage_seed(std::string_view stage) const { return derive_seed(seed, stage); }
};

// Parses a JSON document; every section is optional, unknown keys raise
// ConfigError.
PipelineConfig parse_config(const std::string& text);
PipelineConfig load_config(const std::filesystem::path& path);

// "a.b=value": value is read as JSON when it parses, else as a string.
void apply_overrides(std::string& text, const std::vector<std::string>& overrides);

// Canonical JSON of the effective configuration.
std::string dump_config(const PipelineConfig& cfg);

}  // namespace reachguard
