#pragma once

#include <array>
#include <filesystem>
#include <functional>
#include <vector>

#include "reachguard/checkpoint.hpp"
#include "reachguard/dynamics.hpp"
#include "reachguard/environment.hpp"
#include "reachguard/levelset.hpp"
#include "reachguard/mlp.hpp"

namespace reachguard {

// Input layout: 3 normalised state coordinates, 3 + 2 one-hot environment
// entries, normalised time-to-go.
constexpr std::size_t kNrtInputs = 9;
// V = kNrtValueScale * network output, metres.
constexpr double kNrtValueScale = 10.0;

struct ValueNet {
    Mlp net;
    std::array<double, 3> lo{};
    std::array<double, 3> hi{};
    double horizon = 10.0;

    double omega0() const { return net.omega0(); }
};

struct NrtSample {
    State x;
    EnvParams d;
    double h = 0.0;
};

struct ValueAndGrad {
    double v = 0.0;
    double d_px = 0.0;
    double d_py = 0.0;
    double d_theta = 0.0;
    double d_h = 0.0;
};

// SIREN initialisation over `bounds`; throws ConfigError for omega0 <= 0.
ValueNet init_value_net(const GridSpec& bounds, double horizon, std::vector<std::uint32_t> hidden, double omega0,
                        std::uint64_t seed);

Eigen::VectorXd nrt_input(const ValueNet& p, const NrtSample& s);

ValueAndGrad eval_value_and_grads(const ValueNet& p, const NrtSample& s);
std::vector<ValueAndGrad> eval_value_and_grads(const ValueNet& p, const std::vector<NrtSample>& batch);

// Closed-loop control available at any (x, d).
using EnvPolicy = std::function<double(const State&, const EnvParams&)>;

struct LossTerms {
    double total = 0.0;
    double ham = 0.0;
    double init = 0.0;
};

// Residuals are evaluated on `batch`; the initial-condition term on the
// same states with h = 0. Fills `grad` with d total / d params when given.
LossTerms deepreach_loss(const ValueNet& p, const std::vector<NrtSample>& batch, const std::vector<double>& controls,
                         const PlantConfig& cfg, double lambda, std::vector<double>* grad = nullptr);

struct NrtHyper {
    double lambda = 100.0;
    int batch_size = 1000;
    int iterations = 6000;
    double lr = 1e-4;
    // Fraction of iterations spent on the h = 0 pretraining phase, and the
    // fraction spent growing the time window afterwards.
    double pretrain_fraction = 0.2;
    double curriculum_fraction = 0.6;
    double horizon = 10.0;
    double omega0 = 30.0;
    std::vector<std::uint32_t> hidden{64, 64};
    std::uint64_t seed = 1;

    void validate() const;
};

struct NrtTrainResult {
    ValueNet params;
    std::vector<LossTerms> history;  // one entry per logging interval
};

// Environments to sample over are given explicitly; controls come from
// `policy`, which the caller typically backs with a quantised cache.
NrtTrainResult train_nrt(const EnvPolicy& policy, const GridSpec& bounds, const std::vector<EnvParams>& envs,
                         const PlantConfig& cfg, const NrtHyper& hyper);

double nrt_value(const ValueNet& p, const State& x, const EnvParams& d, double h);

// V(x, d, T) <= 0. Throws OutOfBoundsError outside the trained bounds.
bool nrt_member(const ValueNet& p, const State& x, const EnvParams& d);

struct FidelityReport {
    double sign_agreement = 0.0;  // over samples with |V_grid| > margin
    std::size_t compared = 0;
    double ic_mae = 0.0;  // |V(x, d, 0) - l(x)| over all samples
    std::size_t samples = 0;
};

// Uniform samples over the grid bounds, compared against `grid` for its
// environment. `margin` defaults to consistency_margin(grid.spec).
FidelityReport nrt_fidelity(const ValueNet& p, const GridValue& grid, const PlantConfig& cfg, std::size_t samples,
                            std::uint64_t seed, double margin = -1.0);

// Nearest-node lookup into per-environment policy tables.
class PolicyCache {
public:
    void add(PolicyTable table);
    double operator()(const State& x, const EnvParams& d) const;
    const std::vector<PolicyTable>& tables() const { return tables_; }

private:
    std::vector<PolicyTable> tables_;
};

Checkpoint to_checkpoint(const ValueNet& p);
ValueNet value_net_from_checkpoint(const Checkpoint& ckpt);

}  // namespace reachguard
