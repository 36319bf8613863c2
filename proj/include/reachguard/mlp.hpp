#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "reachguard/common.hpp"

namespace reachguard {

enum class Activation : std::uint8_t { tanh = 0, sine = 1 };

struct LayerShape {
    std::uint32_t in = 0;
    std::uint32_t out = 0;
    friend bool operator==(const LayerShape&, const LayerShape&) = default;
};

using Matrix = Eigen::MatrixXd;
using RowMatrixMap = Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
using ConstRowMatrixMap = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
using VectorMap = Eigen::Map<Eigen::VectorXd>;
using ConstVectorMap = Eigen::Map<const Eigen::VectorXd>;

// Fully-connected network. Hidden layers use `activation`, the last layer is
// linear. Parameters are one flat vector: per layer the weight matrix
// (out x in, row-major) followed by its bias.
class Mlp {
public:
    Mlp() = default;
    Mlp(std::vector<LayerShape> layers, Activation activation, double omega0 = 1.0);

    const std::vector<LayerShape>& layers() const { return layers_; }
    Activation activation() const { return activation_; }
    double omega0() const { return omega0_; }
    std::size_t input_size() const { return layers_.front().in; }
    std::size_t output_size() const { return layers_.back().out; }

    std::vector<double>& params() { return params_; }
    const std::vector<double>& params() const { return params_; }
    std::size_t param_count() const { return params_.size(); }

    std::size_t weight_offset(std::size_t layer) const { return offsets_[layer]; }
    std::size_t bias_offset(std::size_t layer) const {
        return offsets_[layer] + static_cast<std::size_t>(layers_[layer].in) * layers_[layer].out;
    }
    ConstRowMatrixMap weights(std::size_t layer) const;
    ConstVectorMap bias(std::size_t layer) const;

    // Glorot-uniform weights, zero biases.
    void init_glorot(Rng& rng);

    struct Cache {
        std::vector<Matrix> inputs;  // input to each layer
        std::vector<Matrix> pre;     // pre-activation of each layer
    };

    // Columns of `x` are samples.
    Matrix forward(const Matrix& x, Cache* cache = nullptr) const;
    // Accumulates dLoss/dparams into `grad` (same layout as params).
    // Returns dLoss/dinput.
    Matrix backward(const Cache& cache, const Matrix& d_out, std::vector<double>& grad) const;

    // Rounds parameters to float precision so a checkpoint round trip is exact.
    void round_to_float();

private:
    std::vector<LayerShape> layers_;
    std::vector<std::size_t> offsets_;
    Activation activation_ = Activation::tanh;
    double omega0_ = 1.0;
    std::vector<double> params_;
};

class Adam {
public:
    explicit Adam(double lr = 1e-3, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
        : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

    void step(std::vector<double>& params, const std::vector<double>& grad);
    void set_lr(double lr) { lr_ = lr; }
    double lr() const { return lr_; }

private:
    double lr_;
    double beta1_;
    double beta2_;
    double eps_;
    std::uint64_t t_ = 0;
    std::vector<double> m_;
    std::vector<double> v_;
};

// Pixels as network input: one column per observation, centred at 0.
Eigen::VectorXd pixels_to_input(std::span<const float> pixels);

}  // namespace reachguard
