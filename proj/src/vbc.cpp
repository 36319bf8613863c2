#include "reachguard/vbc.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace reachguard {

namespace {

constexpr double kGainPx = -0.74;
constexpr double kGainThetaDeg = -0.44;

// Columns [I_1..I_B, flip(I_1)..flip(I_B)] for the antisymmetric head.
Matrix symmetric_batch(const std::vector<const Observation*>& batch, std::size_t pixels) {
    const auto b = static_cast<Eigen::Index>(batch.size());
    Matrix x(static_cast<Eigen::Index>(pixels), 2 * b);
    for (Eigen::Index j = 0; j < b; ++j) {
        const Observation& obs = *batch[static_cast<std::size_t>(j)];
        if (obs.pixels.size() != pixels) {
            throw DimensionError("estimator: observation has " + std::to_string(obs.pixels.size()) +
                                 " pixels, network expects " + std::to_string(pixels));
        }
        for (int row = 0; row < obs.height; ++row) {
            for (int col = 0; col < obs.width; ++col) {
                const auto i = static_cast<Eigen::Index>(row * obs.width + col);
                const auto im = static_cast<Eigen::Index>(row * obs.width + (obs.width - 1 - col));
                const double v = static_cast<double>(obs.pixels[static_cast<std::size_t>(i)]) - 0.5;
                x(i, j) = v;
                x(im, b + j) = v;
            }
        }
    }
    return x;
}

Matrix head_output(const Matrix& raw) {
    const Eigen::Index b = raw.cols() / 2;
    return 0.5 * (raw.leftCols(b) - raw.rightCols(b));
}

Estimate decode(double g0, double g1, double camera_offset) {
    Estimate e;
    e.theta_hat = kEstimatorThetaScale * g1;
    e.px_hat = kEstimatorPxScale * g0 - camera_offset * std::cos(e.theta_hat);
    return e;
}

Eigen::Vector2d target_of(const State& x, double camera_offset) {
    return {(x.px + camera_offset * std::cos(x.theta)) / kEstimatorPxScale, x.theta / kEstimatorThetaScale};
}

std::vector<const Observation*> pointers(const std::vector<Observation>& data) {
    std::vector<const Observation*> out;
    out.reserve(data.size());
    for (const auto& o : data) {
        out.push_back(&o);
    }
    return out;
}

}  // namespace

EstimatorParams make_estimator(std::size_t pixel_count, std::vector<std::uint32_t> hidden, double camera_offset) {
    std::vector<LayerShape> layers;
    auto prev = static_cast<std::uint32_t>(pixel_count);
    for (auto h : hidden) {
        layers.push_back({prev, h});
        prev = h;
    }
    layers.push_back({prev, 2});
    return {Mlp(std::move(layers), Activation::tanh), camera_offset};
}

std::vector<Estimate> estimate_batch(const std::vector<Observation>& obs, const EstimatorParams& params) {
    std::vector<Estimate> out;
    out.reserve(obs.size());
    constexpr std::size_t kChunk = 256;
    const auto ptrs = pointers(obs);
    for (std::size_t start = 0; start < ptrs.size(); start += kChunk) {
        const std::size_t end = std::min(ptrs.size(), start + kChunk);
        std::vector<const Observation*> chunk(ptrs.begin() + static_cast<std::ptrdiff_t>(start),
                                              ptrs.begin() + static_cast<std::ptrdiff_t>(end));
        const Matrix g = head_output(params.net.forward(symmetric_batch(chunk, params.net.input_size())));
        for (Eigen::Index j = 0; j < g.cols(); ++j) {
            out.push_back(decode(g(0, j), g(1, j), params.camera_offset));
        }
    }
    return out;
}

Estimate estimate(const Observation& obs, const EstimatorParams& params) {
    const Matrix g = head_output(params.net.forward(symmetric_batch({&obs}, params.net.input_size())));
    return decode(g(0, 0), g(1, 0), params.camera_offset);
}

double steering_argument(double px_hat, double theta_hat) {
    return kGainPx * px_hat + kGainThetaDeg * rad_to_deg(theta_hat);
}

double p_controller(const Estimate& e, const PlantConfig& cfg) {
    const double arg = std::clamp(steering_argument(e.px_hat, e.theta_hat), -cfg.max_steer_arg, cfg.max_steer_arg);
    return std::tan(arg);
}

double closed_loop_policy(const State& x, const EnvParams& d, const Sensor& sensor, const EstimatorParams& params,
                          const PlantConfig& cfg) {
    return p_controller(estimate(sensor.render(x, d), params), cfg);
}

double oracle_policy(const State& x, const PlantConfig& cfg) { return p_controller({x.px, x.theta}, cfg); }

Policy make_vbc_policy(const Sensor& sensor, const EstimatorParams& params, const PlantConfig& cfg) {
    return [&sensor, &params, cfg](const State& x, const EnvParams& d, double) {
        return Command{closed_loop_policy(x, d, sensor, params, cfg), std::nullopt};
    };
}

void TrainHyper::validate() const {
    if (!(lr >= 0.0) || epochs <= 0 || batch_size <= 0) {
        throw ConfigError("train hyper: require lr >= 0, epochs > 0, batch_size > 0");
    }
}

EstimationMetrics estimation_metrics(const EstimatorParams& params, const std::vector<Observation>& data) {
    EstimationMetrics m;
    m.n = data.size();
    if (data.empty()) {
        return m;
    }
    const auto est = estimate_batch(data, params);
    for (std::size_t i = 0; i < data.size(); ++i) {
        const State& x = data[i].state.value();
        const double ex = est[i].px_hat - x.px;
        const double et = est[i].theta_hat - x.theta;
        // Head-unit error of the camera-position channel.
        const double cam_err = (est[i].px_hat + params.camera_offset * std::cos(est[i].theta_hat)) -
                               (x.px + params.camera_offset * std::cos(x.theta));
        m.mse += std::pow(cam_err / kEstimatorPxScale, 2) + std::pow(et / kEstimatorThetaScale, 2);
        m.px_mse += ex * ex;
        m.px_mae += std::abs(ex);
        m.theta_mae_deg += std::abs(rad_to_deg(et));
    }
    const double n = static_cast<double>(data.size());
    m.mse /= n;
    m.px_mse /= n;
    m.px_mae /= n;
    m.theta_mae_deg /= n;
    return m;
}

EstimatorTrainResult continue_training(const EstimatorParams& init, const std::vector<Observation>& data,
                                       const TrainHyper& hyper) {
    hyper.validate();
    if (data.empty()) {
        throw std::invalid_argument("train_estimator: empty dataset");
    }
    EstimatorTrainResult result{init, {}};
    Mlp& net = result.params.net;
    const double offset = init.camera_offset;
    Adam adam(hyper.lr);
    Rng rng(hyper.seed);
    std::vector<std::size_t> order(data.size());
    std::iota(order.begin(), order.end(), 0);
    std::vector<double> grad(net.param_count(), 0.0);
    Mlp::Cache cache;

    for (int epoch = 0; epoch < hyper.epochs; ++epoch) {
        // Cosine decay to a tenth of the base rate.
        const double progress = static_cast<double>(epoch) / static_cast<double>(hyper.epochs);
        adam.set_lr(hyper.lr * (0.1 + 0.45 * (1.0 + std::cos(kPi * progress))));
        std::shuffle(order.begin(), order.end(), rng);
        double epoch_loss = 0.0;
        for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(hyper.batch_size)) {
            const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(hyper.batch_size));
            std::vector<const Observation*> batch;
            Matrix target(2, static_cast<Eigen::Index>(end - start));
            for (std::size_t k = start; k < end; ++k) {
                const Observation& obs = data[order[k]];
                if (!obs.state) {
                    throw std::invalid_argument("train_estimator: observation without state label");
                }
                batch.push_back(&obs);
                target.col(static_cast<Eigen::Index>(k - start)) = target_of(*obs.state, offset);
            }
            const auto b = static_cast<Eigen::Index>(batch.size());
            const Matrix raw = net.forward(symmetric_batch(batch, net.input_size()), &cache);
            const Matrix err = head_output(raw) - target;
            epoch_loss += err.squaredNorm();
            // d/d raw of mean_b sum_k err^2, through the antisymmetric head.
            const Matrix d_head = (2.0 / static_cast<double>(b)) * err;
            Matrix d_raw(2, 2 * b);
            d_raw.leftCols(b) = 0.5 * d_head;
            d_raw.rightCols(b) = -0.5 * d_head;
            std::fill(grad.begin(), grad.end(), 0.0);
            net.backward(cache, d_raw, grad);
            adam.step(net.params(), grad);
        }
        epoch_loss /= static_cast<double>(data.size());
        if (!std::isfinite(epoch_loss)) {
            throw DivergenceError("train_estimator: nonfinite loss at epoch " + std::to_string(epoch));
        }
        result.loss_curve.push_back(epoch_loss);
    }
    net.round_to_float();
    return result;
}

EstimatorTrainResult train_estimator(const std::vector<Observation>& data, const TrainHyper& hyper,
                                     std::vector<std::uint32_t> hidden, double camera_offset) {
    if (data.empty()) {
        throw std::invalid_argument("train_estimator: empty dataset");
    }
    EstimatorParams init = make_estimator(data.front().pixels.size(), std::move(hidden), camera_offset);
    Rng rng(derive_seed(hyper.seed, "estimator-init"));
    init.net.init_glorot(rng);
    init.net.round_to_float();
    return continue_training(init, data, hyper);
}

RetrainResult incremental_retrain(const EstimatorParams& params, const std::vector<Observation>& augmented,
                                  const TrainHyper& hyper, const std::vector<Observation>& failure_eval,
                                  const std::vector<Observation>& nominal_eval) {
    RetrainResult r;
    r.failure_before = estimation_metrics(params, failure_eval);
    r.nominal_before = estimation_metrics(params, nominal_eval);
    auto trained = continue_training(params, augmented, hyper);
    r.params = std::move(trained.params);
    r.loss_curve = std::move(trained.loss_curve);
    r.failure_after = estimation_metrics(r.params, failure_eval);
    r.nominal_after = estimation_metrics(r.params, nominal_eval);
    return r;
}

}  // namespace reachguard
