#include "reachguard/mlp.hpp"

#include <cmath>

namespace reachguard {

Mlp::Mlp(std::vector<LayerShape> layers, Activation activation, double omega0)
    : layers_(std::move(layers)), activation_(activation), omega0_(omega0) {
    if (layers_.empty()) {
        throw std::invalid_argument("mlp: at least one layer required");
    }
    std::size_t total = 0;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        if (layers_[i].in == 0 || layers_[i].out == 0) {
            throw std::invalid_argument("mlp: empty layer");
        }
        if (i > 0 && layers_[i].in != layers_[i - 1].out) {
            throw std::invalid_argument("mlp: layer sizes do not chain");
        }
        offsets_.push_back(total);
        total += static_cast<std::size_t>(layers_[i].in) * layers_[i].out + layers_[i].out;
    }
    params_.assign(total, 0.0);
}

ConstRowMatrixMap Mlp::weights(std::size_t layer) const {
    return ConstRowMatrixMap(params_.data() + offsets_[layer], layers_[layer].out, layers_[layer].in);
}

ConstVectorMap Mlp::bias(std::size_t layer) const {
    return ConstVectorMap(params_.data() + bias_offset(layer), layers_[layer].out);
}

void Mlp::init_glorot(Rng& rng) {
    for (std::size_t l = 0; l < layers_.size(); ++l) {
        const double lim = std::sqrt(6.0 / static_cast<double>(layers_[l].in + layers_[l].out));
        const std::size_t n = static_cast<std::size_t>(layers_[l].in) * layers_[l].out;
        for (std::size_t i = 0; i < n; ++i) {
            params_[offsets_[l] + i] = uniform(rng, -lim, lim);
        }
        for (std::size_t i = 0; i < layers_[l].out; ++i) {
            params_[bias_offset(l) + i] = 0.0;
        }
    }
}

Matrix Mlp::forward(const Matrix& x, Cache* cache) const {
    if (static_cast<std::size_t>(x.rows()) != input_size()) {
        throw DimensionError("mlp.forward: expected " + std::to_string(input_size()) + " inputs, got " +
                             std::to_string(x.rows()));
    }
    if (cache) {
        cache->inputs.clear();
        cache->pre.clear();
    }
    Matrix a = x;
    for (std::size_t l = 0; l < layers_.size(); ++l) {
        Matrix z = weights(l) * a;
        z.colwise() += bias(l);
        if (cache) {
            cache->inputs.push_back(a);
            cache->pre.push_back(z);
        }
        if (l + 1 == layers_.size()) {
            return z;
        }
        if (activation_ == Activation::tanh) {
            a = z.array().tanh();
        } else {
            a = (omega0_ * z.array()).sin();
        }
    }
    return a;
}

Matrix Mlp::backward(const Cache& cache, const Matrix& d_out, std::vector<double>& grad) const {
    if (grad.size() != params_.size()) {
        grad.assign(params_.size(), 0.0);
    }
    Matrix delta = d_out;
    for (std::size_t li = layers_.size(); li-- > 0;) {
        if (li + 1 < layers_.size()) {
            const auto& z = cache.pre[li];
            if (activation_ == Activation::tanh) {
                delta.array() *= 1.0 - z.array().tanh().square();
            } else {
                delta.array() *= omega0_ * (omega0_ * z.array()).cos();
            }
        }
        RowMatrixMap gw(grad.data() + offsets_[li], layers_[li].out, layers_[li].in);
        VectorMap gb(grad.data() + bias_offset(li), layers_[li].out);
        gw.noalias() += delta * cache.inputs[li].transpose();
        gb += delta.rowwise().sum();
        delta = weights(li).transpose() * delta;
    }
    return delta;
}

void Mlp::round_to_float() {
    for (double& p : params_) {
        p = static_cast<double>(static_cast<float>(p));
    }
}

void Adam::step(std::vector<double>& params, const std::vector<double>& grad) {
    if (m_.size() != params.size()) {
        m_.assign(params.size(), 0.0);
        v_.assign(params.size(), 0.0);
        t_ = 0;
    }
    ++t_;
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
        m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * grad[i];
        v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * grad[i] * grad[i];
        params[i] -= lr_ * (m_[i] / c1) / (std::sqrt(v_[i] / c2) + eps_);
    }
}

Eigen::VectorXd pixels_to_input(std::span<const float> pixels) {
    Eigen::VectorXd v(static_cast<Eigen::Index>(pixels.size()));
    for (std::size_t i = 0; i < pixels.size(); ++i) {
        v[static_cast<Eigen::Index>(i)] = static_cast<double>(pixels[i]) - 0.5;
    }
    return v;
}

}  // namespace reachguard
