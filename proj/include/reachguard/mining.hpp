#pragma once

#include <filesystem>
#include <functional>
#include <vector>

#include "reachguard/dataset.hpp"
#include "reachguard/levelset.hpp"
#include "reachguard/sensor.hpp"
#include "reachguard/vbc.hpp"

namespace reachguard {

// Tube membership; may throw OutOfBoundsError, which sampling counts and skips.
using TubeQuery = std::function<bool(const State&, const EnvParams&)>;

TubeQuery grid_tube(const std::vector<GridValue>& grids);

struct LabelingReport {
    Dataset data;
    std::size_t positives = 0;
    std::size_t skipped = 0;
};

// Uniform draws over `bounds` x `envs`, rendered and labelled by the tube.
LabelingReport sample_and_label(std::size_t n, const GridSpec& bounds, const std::vector<EnvParams>& envs,
                                const Sensor& sensor, const TubeQuery& tube, std::uint64_t seed);

struct SeedState {
    State x;
    EnvParams d;
};

struct FailureTrace {
    SeedState seed;
    Trajectory trajectory;
    std::vector<Observation> observations;  // one per trajectory sample
    std::size_t first_failure_step = 0;
};

struct MiningResult {
    std::vector<FailureTrace> traces;
    // Tube said unsafe, the rollout stayed safe.
    std::vector<SeedState> disagreements;

    double disagreement_fraction() const;
};

MiningResult mine_failure_traces(const std::vector<SeedState>& seeds, const Sensor& sensor,
                                 const EstimatorParams& estimator, const PlantConfig& cfg, double horizon);

// Label 1 iff |(px_hat - px, theta_hat - theta)| > threshold, theta in radians.
std::vector<std::uint8_t> prediction_error_labels(const std::vector<Observation>& obs,
                                                  const std::vector<Estimate>& estimates, double threshold);
std::vector<std::uint8_t> prediction_error_labels(const std::vector<Observation>& obs, const EstimatorParams& estimator,
                                                  double threshold);

// Duplicates failure records round-robin until they make up at least
// `target_fraction`, then shuffles with `seed`.
Dataset upsample(const Dataset& data, double target_fraction, std::uint64_t seed);

// One VFMD per trace plus manifest.csv.
void export_traces(const std::filesystem::path& dir, const std::vector<FailureTrace>& traces);

}  // namespace reachguard
