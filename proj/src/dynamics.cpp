#include "reachguard/dynamics.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>

#include "reachguard/common.hpp"

namespace reachguard {

double PlantConfig::u_max() const { return std::tan(max_steer_arg); }

void PlantConfig::validate() const {
    if (!(v >= 0.0) || !(half_width > 0.0) || !(dt > 0.0)) {
        throw ConfigError("plant: require v >= 0, half_width > 0, dt > 0");
    }
    if (!(max_steer_arg > 0.0) || max_steer_arg >= kPi / 2.0) {
        throw ConfigError("plant: max_steer_arg must lie in (0, pi/2)");
    }
}

double clamp_control(double u, const PlantConfig& cfg) {
    const double lim = cfg.u_max();
    return std::clamp(u, -lim, lim);
}

StateRate flow(const State& x, double u, double v) {
    return {v * std::sin(x.theta), v * std::cos(x.theta), u};
}

State step(const State& x, double u, double v, double dt) {
    auto advance = [&](const StateRate& k, double h) {
        return State{x.px + h * k.px, x.py + h * k.py, x.theta + h * k.theta};
    };
    const StateRate k1 = flow(x, u, v);
    const StateRate k2 = flow(advance(k1, dt / 2.0), u, v);
    const StateRate k3 = flow(advance(k2, dt / 2.0), u, v);
    const StateRate k4 = flow(advance(k3, dt), u, v);
    State out;
    out.px = x.px + dt / 6.0 * (k1.px + 2.0 * k2.px + 2.0 * k3.px + k4.px);
    out.py = x.py + dt / 6.0 * (k1.py + 2.0 * k2.py + 2.0 * k3.py + k4.py);
    out.theta = normalize_angle(x.theta + dt / 6.0 * (k1.theta + 2.0 * k2.theta + 2.0 * k3.theta + k4.theta));
    return out;
}

double signed_distance(const State& x, const PlantConfig& cfg) { return cfg.half_width - std::abs(x.px); }

bool in_failure(const State& x, const PlantConfig& cfg) { return std::abs(x.px) >= cfg.half_width; }

RolloutError::RolloutError(double t, const std::string& what)
    : std::runtime_error("rollout: policy failed at t=" + std::to_string(t) + ": " + what), time_(t) {}

Trajectory rollout(const State& x0, const Policy& policy, const EnvParams& env, double horizon,
                   const PlantConfig& cfg) {
    if (!(horizon >= 0.0)) {
        throw std::invalid_argument("rollout: horizon must be >= 0");
    }
    const auto n_steps = static_cast<std::size_t>(std::llround(horizon / cfg.dt));
    Trajectory traj;
    traj.samples.reserve(n_steps + 1);
    State x = x0;
    Command cmd;
    x.theta = normalize_angle(x.theta);
    for (std::size_t i = 0; i <= n_steps; ++i) {
        const double t = static_cast<double>(i) * cfg.dt;
        if (i < n_steps) {
            try {
                cmd = policy(x, env, t);
            } catch (const RolloutError&) {
                throw;
            } catch (const std::exception& e) {
                throw RolloutError(t, e.what());
            }
        }
        const double u = clamp_control(cmd.u, cfg);
        const double v = cmd.speed.value_or(cfg.v);
        const bool failed = in_failure(x, cfg);
        traj.samples.push_back({t, x, u, v, failed});
        if (failed && !traj.first_failure_time) {
            traj.first_failure_time = t;
            traj.first_failure_index = i;
        }
        if (i < n_steps) {
            x = step(x, u, v, cfg.dt);
        }
    }
    return traj;
}

void write_trajectory_csv(std::ostream& out, const Trajectory& traj) {
    out << "t,px,py,theta_deg,u,v,in_failure\n";
    for (const auto& s : traj.samples) {
        out << s.t << ',' << s.x.px << ',' << s.x.py << ',' << rad_to_deg(s.x.theta) << ',' << s.u << ','
            << s.v << ',' << (s.in_failure ? 1 : 0) << '\n';
    }
}

}  // namespace reachguard
