#include "reachguard/nrt.hpp"

#include <algorithm>
#include <cmath>

#include "reachguard/common.hpp"

namespace reachguard {

namespace {

// Tangent directions carried through the network: d/dpx, d/dpy, d/dtheta, d/dh.
constexpr std::size_t kTangents = 4;
constexpr std::array<Eigen::Index, kTangents> kTangentInput{0, 1, 2, 8};

std::array<double, kTangents> tangent_scales(const ValueNet& p) {
    return {2.0 / (p.hi[0] - p.lo[0]), 2.0 / (p.hi[1] - p.lo[1]), 2.0 / (p.hi[2] - p.lo[2]), 1.0 / p.horizon};
}

void fill_input(const ValueNet& p, const NrtSample& s, Eigen::Ref<Eigen::VectorXd> col) {
    const std::array<double, 3> c{s.x.px, s.x.py, s.x.theta};
    for (std::size_t d = 0; d < 3; ++d) {
        col[static_cast<Eigen::Index>(d)] = 2.0 * (c[d] - p.lo[d]) / (p.hi[d] - p.lo[d]) - 1.0;
    }
    for (Eigen::Index i = 3; i < 8; ++i) {
        col[i] = 0.0;
    }
    col[3 + static_cast<Eigen::Index>(s.d.d1)] = 1.0;
    col[6 + static_cast<Eigen::Index>(s.d.d2)] = 1.0;
    col[8] = s.h / p.horizon;
}

Matrix batch_input(const ValueNet& p, const std::vector<NrtSample>& batch) {
    Matrix x(static_cast<Eigen::Index>(kNrtInputs), static_cast<Eigen::Index>(batch.size()));
    for (std::size_t j = 0; j < batch.size(); ++j) {
        fill_input(p, batch[j], x.col(static_cast<Eigen::Index>(j)));
    }
    return x;
}

// Forward pass that also pushes the input tangents through every layer.
struct TangentCache {
    std::vector<Matrix> a;                         // layer inputs
    std::vector<std::array<Matrix, kTangents>> ad;  // tangents of layer inputs
    std::vector<Matrix> z;
    std::vector<std::array<Matrix, kTangents>> zd;
    Matrix out;
    std::array<Matrix, kTangents> out_d;
};

void forward_tangent(const ValueNet& p, const Matrix& x, TangentCache& c) {
    const Mlp& net = p.net;
    const double w0 = net.omega0();
    const auto scales = tangent_scales(p);
    const std::size_t n_layers = net.layers().size();
    c.a.assign(n_layers, Matrix());
    c.ad.assign(n_layers, {});
    c.z.assign(n_layers, Matrix());
    c.zd.assign(n_layers, {});
    c.a[0] = x;
    for (std::size_t k = 0; k < kTangents; ++k) {
        c.ad[0][k] = Matrix::Zero(x.rows(), x.cols());
        c.ad[0][k].row(kTangentInput[k]).setConstant(scales[k]);
    }
    for (std::size_t l = 0; l < n_layers; ++l) {
        const auto w = net.weights(l);
        Matrix z = w * c.a[l];
        z.colwise() += net.bias(l);
        std::array<Matrix, kTangents> zd;
        for (std::size_t k = 0; k < kTangents; ++k) {
            zd[k] = w * c.ad[l][k];
        }
        if (l + 1 == n_layers) {
            c.out = std::move(z);
            c.out_d = std::move(zd);
            return;
        }
        const Matrix cosz = (w0 * z.array()).cos();
        c.a[l + 1] = (w0 * z.array()).sin();
        for (std::size_t k = 0; k < kTangents; ++k) {
            c.ad[l + 1][k] = w0 * cosz.array() * zd[k].array();
        }
        c.z[l] = std::move(z);
        c.zd[l] = std::move(zd);
    }
}

// Reverse pass over the tangent-augmented graph. g_out and g_out_d are the
// adjoints of the network output and of its input tangents.
void backward_tangent(const ValueNet& p, const TangentCache& c, const Matrix& g_out,
                      const std::array<Matrix, kTangents>& g_out_d, std::vector<double>& grad) {
    const Mlp& net = p.net;
    const double w0 = net.omega0();
    Matrix gz = g_out;
    std::array<Matrix, kTangents> gzd = g_out_d;
    for (std::size_t li = net.layers().size(); li-- > 0;) {
        const auto shape = net.layers()[li];
        RowMatrixMap gw(grad.data() + net.weight_offset(li), shape.out, shape.in);
        VectorMap gb(grad.data() + net.bias_offset(li), shape.out);
        gw.noalias() += gz * c.a[li].transpose();
        for (std::size_t k = 0; k < kTangents; ++k) {
            gw.noalias() += gzd[k] * c.ad[li][k].transpose();
        }
        gb += gz.rowwise().sum();
        if (li == 0) {
            return;
        }
        const auto w = net.weights(li);
        const Matrix ga = w.transpose() * gz;
        std::array<Matrix, kTangents> gad;
        for (std::size_t k = 0; k < kTangents; ++k) {
            gad[k] = w.transpose() * gzd[k];
        }
        // Through a = sin(w0 z): a' = w0 cos(w0 z) z', and d(a')/dz = -w0^2 sin(w0 z) z'.
        const Matrix& zp = c.z[li - 1];
        const Eigen::ArrayXXd cosz = w0 * (w0 * zp.array()).cos();
        const Eigen::ArrayXXd sinz = -w0 * w0 * (w0 * zp.array()).sin();
        Eigen::ArrayXXd acc = ga.array() * cosz;
        for (std::size_t k = 0; k < kTangents; ++k) {
            acc += gad[k].array() * c.zd[li - 1][k].array() * sinz;
            gzd[k] = gad[k].array() * cosz;
        }
        gz = acc.matrix();
    }
}

// Mean |V(x, d, 0) - l(x)|; accumulates `weight` times its gradient.
double init_loss(const ValueNet& p, const std::vector<NrtSample>& batch, const PlantConfig& cfg, double weight,
                 std::vector<double>* grad) {
    std::vector<NrtSample> zero = batch;
    for (auto& z : zero) {
        z.h = 0.0;
    }
    const auto b = static_cast<Eigen::Index>(batch.size());
    const double inv_b = 1.0 / static_cast<double>(b);
    Mlp::Cache cache;
    const Matrix v0 = p.net.forward(batch_input(p, zero), &cache);
    Matrix g0(1, b);
    double sum = 0.0;
    for (Eigen::Index j = 0; j < b; ++j) {
        const double r = kNrtValueScale * v0(0, j) - signed_distance(zero[static_cast<std::size_t>(j)].x, cfg);
        sum += std::abs(r);
        g0(0, j) = weight * ((r > 0.0) - (r < 0.0)) * kNrtValueScale * inv_b;
    }
    if (grad) {
        if (grad->size() != p.net.param_count()) {
            grad->assign(p.net.param_count(), 0.0);
        }
        p.net.backward(cache, g0, *grad);
    }
    return sum * inv_b;
}

}  // namespace

void NrtHyper::validate() const {
    if (!(lambda > 0.0) || !(horizon > 0.0) || !(omega0 > 0.0) || batch_size <= 0 || iterations <= 0 ||
        !(lr >= 0.0) || pretrain_fraction < 0.0 || curriculum_fraction < 0.0 ||
        pretrain_fraction + curriculum_fraction > 1.0) {
        throw ConfigError("nrt hyper: require lambda, horizon, omega0 > 0, positive sizes, fractions summing to <= 1");
    }
}

ValueNet init_value_net(const GridSpec& bounds, double horizon, std::vector<std::uint32_t> hidden, double omega0,
                        std::uint64_t seed) {
    if (!(omega0 > 0.0)) {
        throw ConfigError("value network: omega0 must be positive");
    }
    if (!(horizon > 0.0)) {
        throw ConfigError("value network: horizon must be positive");
    }
    std::vector<LayerShape> layers;
    auto prev = static_cast<std::uint32_t>(kNrtInputs);
    for (auto h : hidden) {
        layers.push_back({prev, h});
        prev = h;
    }
    layers.push_back({prev, 1});
    ValueNet p{Mlp(std::move(layers), Activation::sine, omega0), {}, {}, horizon};
    for (std::size_t d = 0; d < 3; ++d) {
        p.lo[d] = bounds.axes[d].min;
        p.hi[d] = bounds.axes[d].max;
    }
    Rng rng(seed);
    auto& params = p.net.params();
    for (std::size_t l = 0; l < p.net.layers().size(); ++l) {
        const double fan_in = p.net.layers()[l].in;
        const double lim = l == 0 ? 1.0 / fan_in : std::sqrt(6.0 / fan_in) / omega0;
        const std::size_t end = l + 1 < p.net.layers().size() ? p.net.weight_offset(l + 1) : params.size();
        for (std::size_t i = p.net.weight_offset(l); i < end; ++i) {
            params[i] = uniform(rng, -lim, lim);
        }
    }
    p.net.round_to_float();
    return p;
}

Eigen::VectorXd nrt_input(const ValueNet& p, const NrtSample& s) {
    Eigen::VectorXd v(static_cast<Eigen::Index>(kNrtInputs));
    fill_input(p, s, v);
    return v;
}

std::vector<ValueAndGrad> eval_value_and_grads(const ValueNet& p, const std::vector<NrtSample>& batch) {
    std::vector<ValueAndGrad> out(batch.size());
    if (batch.empty()) {
        return out;
    }
    TangentCache c;
    forward_tangent(p, batch_input(p, batch), c);
    for (std::size_t j = 0; j < batch.size(); ++j) {
        const auto col = static_cast<Eigen::Index>(j);
        out[j] = {kNrtValueScale * c.out(0, col), kNrtValueScale * c.out_d[0](0, col),
                  kNrtValueScale * c.out_d[1](0, col), kNrtValueScale * c.out_d[2](0, col),
                  kNrtValueScale * c.out_d[3](0, col)};
    }
    return out;
}

ValueAndGrad eval_value_and_grads(const ValueNet& p, const NrtSample& s) { return eval_value_and_grads(p, std::vector<NrtSample>{s})[0]; }

LossTerms deepreach_loss(const ValueNet& p, const std::vector<NrtSample>& batch, const std::vector<double>& controls,
                         const PlantConfig& cfg, double lambda, std::vector<double>* grad) {
    if (batch.empty()) {
        throw std::invalid_argument("deepreach_loss: empty batch");
    }
    if (controls.size() != batch.size()) {
        throw DimensionError("deepreach_loss: one control per sample required");
    }
    const auto b = static_cast<Eigen::Index>(batch.size());
    const double inv_b = 1.0 / static_cast<double>(b);
    const double s = kNrtValueScale;

    // Hamiltonian residual on the batch.
    TangentCache c;
    forward_tangent(p, batch_input(p, batch), c);
    Matrix g_out = Matrix::Zero(1, b);
    std::array<Matrix, kTangents> g_out_d;
    for (auto& m : g_out_d) {
        m = Matrix::Zero(1, b);
    }
    LossTerms terms;
    for (Eigen::Index j = 0; j < b; ++j) {
        const NrtSample& smp = batch[static_cast<std::size_t>(j)];
        const double fx = cfg.v * std::sin(smp.x.theta);
        const double fy = cfg.v * std::cos(smp.x.theta);
        const double u = controls[static_cast<std::size_t>(j)];
        const std::array<double, kTangents> coef{fx, fy, u, -1.0};
        double ham = 0.0;
        for (std::size_t k = 0; k < kTangents; ++k) {
            ham += coef[k] * s * c.out_d[k](0, j);
        }
        const double gap = signed_distance(smp.x, cfg) - s * c.out(0, j);
        const double r = std::min(ham, gap);
        if (!std::isfinite(r)) {
            throw DivergenceError("deepreach_loss: nonfinite residual at sample " + std::to_string(j));
        }
        terms.ham += std::abs(r);
        const double sg = (r > 0.0) - (r < 0.0);
        if (ham <= gap) {
            for (std::size_t k = 0; k < kTangents; ++k) {
                g_out_d[k](0, j) = sg * coef[k] * s * inv_b;
            }
        } else {
            g_out(0, j) = -sg * s * inv_b;
        }
    }
    terms.ham *= inv_b;
    if (grad) {
        grad->assign(p.net.param_count(), 0.0);
        backward_tangent(p, c, g_out, g_out_d, *grad);
    }

    // Initial condition on the same states at h = 0.
    terms.init = init_loss(p, batch, cfg, lambda, grad);
    terms.total = terms.ham + lambda * terms.init;
    return terms;
}

NrtTrainResult train_nrt(const EnvPolicy& policy, const GridSpec& bounds, const std::vector<EnvParams>& envs,
                         const PlantConfig& cfg, const NrtHyper& hyper) {
    hyper.validate();
    if (envs.empty()) {
        throw std::invalid_argument("train_nrt: no environments");
    }
    NrtTrainResult result{init_value_net(bounds, hyper.horizon, hyper.hidden, hyper.omega0,
                                         derive_seed(hyper.seed, "nrt-init")),
                          {}};
    ValueNet& p = result.params;
    Rng rng(derive_seed(hyper.seed, "nrt-sample"));
    Adam adam(hyper.lr);
    std::vector<double> grad;
    const auto pretrain = static_cast<int>(hyper.pretrain_fraction * hyper.iterations);
    const auto grow = static_cast<int>(hyper.curriculum_fraction * hyper.iterations);
    const int log_every = std::max(1, hyper.iterations / 100);
    LossTerms window_sum;
    int window_n = 0;

    std::vector<NrtSample> batch(static_cast<std::size_t>(hyper.batch_size));
    std::vector<double> controls(batch.size());
    for (int it = 0; it < hyper.iterations; ++it) {
        double h_max = 0.0;
        if (it >= pretrain) {
            h_max = grow > 0 ? hyper.horizon * std::min(1.0, static_cast<double>(it - pretrain + 1) / grow)
                             : hyper.horizon;
        }
        for (std::size_t j = 0; j < batch.size(); ++j) {
            NrtSample& smp = batch[j];
            smp.x = {uniform(rng, bounds.axes[0].min, bounds.axes[0].max),
                     uniform(rng, bounds.axes[1].min, bounds.axes[1].max),
                     uniform(rng, bounds.axes[2].min, bounds.axes[2].max)};
            smp.d = envs[std::uniform_int_distribution<std::size_t>(0, envs.size() - 1)(rng)];
            smp.h = h_max > 0.0 ? uniform(rng, 0.0, h_max) : 0.0;
            controls[j] = policy(smp.x, smp.d);
        }
        LossTerms terms;
        if (it < pretrain) {
            // Pretraining fits the initial condition alone.
            grad.assign(p.net.param_count(), 0.0);
            terms.init = init_loss(p, batch, cfg, 1.0, &grad);
            terms.total = terms.init;
        } else {
            terms = deepreach_loss(p, batch, controls, cfg, hyper.lambda, &grad);
        }
        if (!std::isfinite(terms.total) || terms.total > 1e4 * std::max(1.0, hyper.lambda)) {
            result.history.push_back(terms);
            throw DivergenceError("train_nrt: loss diverged at iteration " + std::to_string(it));
        }
        adam.step(p.net.params(), grad);
        window_sum.total += terms.total;
        window_sum.ham += terms.ham;
        window_sum.init += terms.init;
        if (++window_n == log_every) {
            result.history.push_back({window_sum.total / window_n, window_sum.ham / window_n, window_sum.init / window_n});
            window_sum = {};
            window_n = 0;
        }
    }
    p.net.round_to_float();
    return result;
}

double nrt_value(const ValueNet& p, const State& x, const EnvParams& d, double h) {
    const Matrix out = p.net.forward(nrt_input(p, {x, d, h}));
    return kNrtValueScale * out(0, 0);
}

bool nrt_member(const ValueNet& p, const State& x, const EnvParams& d) {
    const std::array<double, 3> c{x.px, x.py, x.theta};
    for (std::size_t i = 0; i < 3; ++i) {
        if (!(c[i] >= p.lo[i] && c[i] <= p.hi[i])) {
            throw OutOfBoundsError("nrt_member: state outside trained bounds");
        }
    }
    return nrt_value(p, x, d, p.horizon) <= 0.0;
}

FidelityReport nrt_fidelity(const ValueNet& p, const GridValue& grid, const PlantConfig& cfg, std::size_t samples,
                            std::uint64_t seed, double margin) {
    if (margin < 0.0) {
        margin = consistency_margin(grid.spec);
    }
    Rng rng(seed);
    FidelityReport r;
    r.samples = samples;
    std::size_t agree = 0;
    const auto& ax = grid.spec.axes;
    for (std::size_t i = 0; i < samples; ++i) {
        const State x{uniform(rng, ax[0].min, ax[0].max), uniform(rng, ax[1].min, ax[1].max),
                      uniform(rng, ax[2].min, ax[2].max)};
        r.ic_mae += std::abs(nrt_value(p, x, grid.env, 0.0) - signed_distance(x, cfg));
        const double vg = value_at(grid, x);
        if (std::abs(vg) <= margin) {
            continue;
        }
        ++r.compared;
        agree += (vg <= 0.0) == nrt_member(p, x, grid.env) ? 1 : 0;
    }
    if (samples > 0) {
        r.ic_mae /= static_cast<double>(samples);
    }
    r.sign_agreement = r.compared > 0 ? static_cast<double>(agree) / static_cast<double>(r.compared) : 0.0;
    return r;
}

void PolicyCache::add(PolicyTable table) {
    for (auto& t : tables_) {
        if (t.env == table.env) {
            t = std::move(table);
            return;
        }
    }
    tables_.push_back(std::move(table));
}

double PolicyCache::operator()(const State& x, const EnvParams& d) const {
    for (const auto& t : tables_) {
        if (!(t.env == d)) {
            continue;
        }
        const std::array<double, 3> c{x.px, x.py, x.theta};
        std::array<std::size_t, 3> idx{};
        for (std::size_t a = 0; a < 3; ++a) {
            const auto& ax = t.spec.axes[a];
            const double pos = std::round((c[a] - ax.min) / ax.spacing());
            idx[a] = static_cast<std::size_t>(std::clamp(pos, 0.0, static_cast<double>(ax.count - 1)));
        }
        return t.u[t.spec.index(idx[0], idx[1], idx[2])];
    }
    throw MissingPrerequisite("policy cache: no table for " + to_string(d));
}

Checkpoint to_checkpoint(const ValueNet& p) {
    Checkpoint ck = to_checkpoint(p.net);
    ck.nrt = NrtMetadata{p.lo, p.hi, p.horizon, p.net.omega0(), kEnvEncodingVersion};
    return ck;
}

ValueNet value_net_from_checkpoint(const Checkpoint& ckpt) {
    if (!ckpt.nrt) {
        throw FormatError("VFMW: checkpoint lacks value-network metadata");
    }
    if (ckpt.layers.empty() || ckpt.layers.front().in != kNrtInputs || ckpt.layers.back().out != 1) {
        throw FormatError("VFMW: not a value-network architecture");
    }
    if (ckpt.nrt->env_encoding_version != kEnvEncodingVersion) {
        throw FormatError("VFMW: unsupported environment encoding");
    }
    return {to_mlp(ckpt, Activation::sine, ckpt.nrt->omega0), ckpt.nrt->lo, ckpt.nrt->hi, ckpt.nrt->horizon};
}

}  // namespace reachguard
