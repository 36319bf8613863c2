#pragma once

#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include "reachguard/fd.hpp"
#include "reachguard/mining.hpp"
#include "reachguard/vbc.hpp"

namespace reachguard {

enum class FallbackVariant : std::uint8_t { gps = 0, velocity = 1 };

std::string to_string(FallbackVariant v);
FallbackVariant parse_fallback_variant(const std::string& s);

struct FallbackMode {
    FallbackVariant variant = FallbackVariant::gps;
    double gps_sigma = 1.0;
    double dv = 0.01;
    double v_floor = 0.0;

    void validate() const;
};

struct PipelineState {
    double v = 5.0;
    Rng rng;
    std::size_t activations = 0;
    std::size_t steps = 0;
};

// Observation -> 1 (unsafe) or 0.
using Detector = std::function<int(const Observation&)>;

Detector make_fd_detector(const FdParams& fd, double q_hat);

struct SwitchOutput {
    double u = 0.0;
    double v = 0.0;
    int fd_flag = 0;
};

// Switch: VBC when the detector passes the image, otherwise
// the fallback law.
SwitchOutput switch_controller(const Observation& obs, const State& x, const Detector& detector,
                               const FallbackMode& mode, PipelineState& ps, const EstimatorParams& estimator,
                               const PlantConfig& cfg);

// P-controller on the true state corrupted by sigma * N(0, 1) per channel
// (metres and degrees).
double gps_fallback(const State& x, double sigma, Rng& rng, const PlantConfig& cfg);

// Lowers the speed by dv on a flagged step; never re-accelerates.
double velocity_fallback(PipelineState& ps, int fd_flag, const FallbackMode& mode);

enum class ControllerKind : std::uint8_t { bare = 0, pipeline = 1 };

struct UnsafeRow {
    std::string controller;
    std::string env;
    double unsafe_fraction = 0.0;
    std::size_t n = 0;
    double mean_activations = 0.0;
    double steps_per_sec = 0.0;  // wall-clock
};

struct UnsafeReport {
    double unsafe_fraction = 0.0;
    std::vector<UnsafeRow> rows;  // per environment, then "all"
};

struct PipelineSpec {
    const Sensor* sensor = nullptr;
    const EstimatorParams* estimator = nullptr;
    Detector detector;
    FallbackMode mode;
    std::uint64_t seed = 1;
};

// Fraction of initial states whose rollout enters O. Each initial state
// owns the RNG stream derive_seed(seed, index), so bare and pipeline runs
// on the same set are matched.
UnsafeReport empirical_unsafe_fraction(ControllerKind kind, const std::vector<SeedState>& initial,
                                       const PipelineSpec& spec, const PlantConfig& cfg, double horizon);

// One rollout of the switched pipeline.
Trajectory pipeline_rollout(const SeedState& start, const PipelineSpec& spec, const PlantConfig& cfg, double horizon,
                            std::uint64_t stream_seed, std::size_t* activations = nullptr);

// controller,env,unsafe_fraction,n,mean_activations,steps_per_sec. Without
// the wall-clock column identical runs write identical files.
void write_comparison_csv(std::ostream& out, const std::vector<UnsafeRow>& rows, bool with_rate = true);

}  // namespace reachguard
