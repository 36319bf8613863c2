#include "reachguard/fallback.hpp"

#include <algorithm>
#include <chrono>
#include <iomanip>
#include <map>
#include <ostream>

#include "reachguard/parallel.hpp"

namespace reachguard {

std::string to_string(FallbackVariant v) { return v == FallbackVariant::gps ? "gps" : "velocity"; }

FallbackVariant parse_fallback_variant(const std::string& s) {
    if (s == "gps") {
        return FallbackVariant::gps;
    }
    if (s == "velocity") {
        return FallbackVariant::velocity;
    }
    throw ConfigError("unknown fallback mode '" + s + "' (expected gps or velocity)");
}

void FallbackMode::validate() const {
    if (!(dv > 0.0) || !(gps_sigma >= 0.0) || !(v_floor >= 0.0)) {
        throw ConfigError("fallback: require dv > 0, sigma >= 0, v_floor >= 0");
    }
}

Detector make_fd_detector(const FdParams& fd, double q_hat) {
    return [&fd, q_hat](const Observation& obs) { return fd_classify(fd, q_hat, obs); };
}

double gps_fallback(const State& x, double sigma, Rng& rng, const PlantConfig& cfg) {
    std::normal_distribution<double> n01(0.0, 1.0);
    const double e1 = n01(rng);
    const double e2 = n01(rng);
    return p_controller({x.px + sigma * e1, x.theta + deg_to_rad(sigma * e2)}, cfg);
}

double velocity_fallback(PipelineState& ps, int fd_flag, const FallbackMode& mode) {
    if (fd_flag) {
        ps.v = std::max(mode.v_floor, ps.v - mode.dv);
    }
    return ps.v;
}

SwitchOutput switch_controller(const Observation& obs, const State& x, const Detector& detector,
                               const FallbackMode& mode, PipelineState& ps, const EstimatorParams& estimator,
                               const PlantConfig& cfg) {
    SwitchOutput out;
    out.fd_flag = detector(obs);
    ++ps.steps;
    if (!out.fd_flag) {
        out.u = p_controller(estimate(obs, estimator), cfg);
        out.v = ps.v;
        return out;
    }
    ++ps.activations;
    if (mode.variant == FallbackVariant::gps) {
        out.u = gps_fallback(x, mode.gps_sigma, ps.rng, cfg);
        out.v = ps.v;
    } else {
        out.u = p_controller(estimate(obs, estimator), cfg);
        out.v = velocity_fallback(ps, 1, mode);
    }
    return out;
}

Trajectory pipeline_rollout(const SeedState& start, const PipelineSpec& spec, const PlantConfig& cfg, double horizon,
                            std::uint64_t stream_seed, std::size_t* activations) {
    PipelineState ps{cfg.v, Rng(stream_seed), 0, 0};
    const Policy policy = [&](const State& x, const EnvParams& d, double) {
        const Observation obs = spec.sensor->render(x, d);
        const SwitchOutput s = switch_controller(obs, x, spec.detector, spec.mode, ps, *spec.estimator, cfg);
        return Command{s.u, s.v};
    };
    Trajectory tr = rollout(start.x, policy, start.d, horizon, cfg);
    if (activations) {
        *activations = ps.activations;
    }
    return tr;
}

UnsafeReport empirical_unsafe_fraction(ControllerKind kind, const std::vector<SeedState>& initial,
                                       const PipelineSpec& spec, const PlantConfig& cfg, double horizon) {
    if (initial.empty()) {
        throw std::invalid_argument("empirical_unsafe_fraction: empty initial set");
    }
    if (!spec.sensor || !spec.estimator) {
        throw std::invalid_argument("empirical_unsafe_fraction: sensor and estimator required");
    }
    if (kind == ControllerKind::pipeline) {
        spec.mode.validate();
        if (!spec.detector) {
            throw std::invalid_argument("empirical_unsafe_fraction: pipeline needs a detector");
        }
    }
    std::vector<char> failed(initial.size(), 0);
    std::vector<std::size_t> activations(initial.size(), 0);
    std::vector<std::size_t> steps(initial.size(), 0);
    const auto t0 = std::chrono::steady_clock::now();
    const Policy bare = make_vbc_policy(*spec.sensor, *spec.estimator, cfg);
    parallel_for(initial.size(), [&](std::size_t i) {
        Trajectory tr;
        if (kind == ControllerKind::bare) {
            tr = rollout(initial[i].x, bare, initial[i].d, horizon, cfg);
        } else {
            tr = pipeline_rollout(initial[i], spec, cfg, horizon, derive_seed(spec.seed, static_cast<std::uint64_t>(i)),
                                  &activations[i]);
        }
        failed[i] = tr.first_failure_time.has_value();
        steps[i] = tr.samples.empty() ? 0 : tr.samples.size() - 1;
    });
    const double elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    const std::string name = kind == ControllerKind::bare ? "bare" : "pipeline";
    struct Acc {
        std::size_t n = 0, bad = 0, act = 0;
    };
    std::map<std::string, Acc> groups;
    Acc all;
    std::size_t total_steps = 0;
    for (std::size_t i = 0; i < initial.size(); ++i) {
        for (Acc* a : {&groups[to_string(initial[i].d)], &all}) {
            ++a->n;
            a->bad += failed[i];
            a->act += activations[i];
        }
        total_steps += steps[i];
    }
    const double rate = elapsed > 0.0 ? static_cast<double>(total_steps) / elapsed : 0.0;
    auto row = [&](const std::string& env, const Acc& a) {
        return UnsafeRow{name, env, static_cast<double>(a.bad) / static_cast<double>(a.n), a.n,
                         static_cast<double>(a.act) / static_cast<double>(a.n), rate};
    };
    UnsafeReport report;
    for (const auto& [env, a] : groups) {
        report.rows.push_back(row(env, a));
    }
    report.rows.push_back(row("all", all));
    report.unsafe_fraction = report.rows.back().unsafe_fraction;
    return report;
}

void write_comparison_csv(std::ostream& out, const std::vector<UnsafeRow>& rows, bool with_rate) {
    out << "controller,env,unsafe_fraction,n,mean_activations" << (with_rate ? ",steps_per_sec\n" : "\n");
    for (const auto& r : rows) {
        out << r.controller << ',' << r.env << ',' << std::setprecision(6) << r.unsafe_fraction << ',' << r.n << ','
            << r.mean_activations;
        if (with_rate) {
            out << ',' << r.steps_per_sec;
        }
        out << '\n';
    }
}

}  // namespace reachguard
