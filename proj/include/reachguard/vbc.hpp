#pragma once

#include <vector>

#include "reachguard/dynamics.hpp"
#include "reachguard/mlp.hpp"
#include "reachguard/sensor.hpp"

namespace reachguard {

struct Estimate {
    double px_hat = 0.0;
    double theta_hat = 0.0;
};

// Output scales of the estimator head: metres and radians per unit output.
constexpr double kEstimatorPxScale = 10.0;
constexpr double kEstimatorThetaScale = 0.25;

// Pixel-input state estimator. The head is mirror-antisymmetrized,
//   g(I) = (f(I) - f(flip I)) / 2,
// and g estimates the camera's lateral position and heading; px_hat then
// subtracts the wing offset. With a centred camera the whole closed loop is
// exactly mirror-symmetric.
struct EstimatorParams {
    Mlp net;
    double camera_offset = 0.0;
};

EstimatorParams make_estimator(std::size_t pixel_count, std::vector<std::uint32_t> hidden, double camera_offset);

Estimate estimate(const Observation& obs, const EstimatorParams& params);
std::vector<Estimate> estimate_batch(const std::vector<Observation>& obs, const EstimatorParams& params);

// Argument of the steering law: -0.74 px_hat[m] - 0.44 theta_hat[deg].
double steering_argument(double px_hat, double theta_hat);
// Heading rate tan(clamp(argument)), rad/s. Clamping the argument rather
// than the output keeps tan away from its poles.
double p_controller(const Estimate& e, const PlantConfig& cfg);

// pi_hat(x, d) = p_controller(estimate(S(x, d))).
double closed_loop_policy(const State& x, const EnvParams& d, const Sensor& sensor, const EstimatorParams& params,
                          const PlantConfig& cfg);

// State feedback with perfect estimates.
double oracle_policy(const State& x, const PlantConfig& cfg);

Policy make_vbc_policy(const Sensor& sensor, const EstimatorParams& params, const PlantConfig& cfg);

struct TrainHyper {
    double lr = 1e-3;
    int epochs = 30;
    int batch_size = 64;
    std::uint64_t seed = 1;

    void validate() const;
};

struct EstimatorTrainResult {
    EstimatorParams params;
    std::vector<double> loss_curve;  // mean loss per epoch
};

// Mean of squared errors in head units (px / 10 m, theta / 0.25 rad).
struct EstimationMetrics {
    double mse = 0.0;
    double px_mse = 0.0;
    double px_mae = 0.0;
    double theta_mae_deg = 0.0;
    std::size_t n = 0;
};

EstimationMetrics estimation_metrics(const EstimatorParams& params, const std::vector<Observation>& data);

// Observations must carry their source state.
EstimatorTrainResult train_estimator(const std::vector<Observation>& data, const TrainHyper& hyper,
                                     std::vector<std::uint32_t> hidden, double camera_offset);

// Continues optimisation from `init`.
EstimatorTrainResult continue_training(const EstimatorParams& init, const std::vector<Observation>& data,
                                       const TrainHyper& hyper);

struct RetrainResult {
    EstimatorParams params;
    std::vector<double> loss_curve;
    EstimationMetrics failure_before;
    EstimationMetrics failure_after;
    EstimationMetrics nominal_before;
    EstimationMetrics nominal_after;
};

RetrainResult incremental_retrain(const EstimatorParams& params, const std::vector<Observation>& augmented,
                                  const TrainHyper& hyper, const std::vector<Observation>& failure_eval,
                                  const std::vector<Observation>& nominal_eval);

}  // namespace reachguard
