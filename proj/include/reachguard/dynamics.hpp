#pragma once

#include <functional>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "reachguard/environment.hpp"

namespace reachguard {

// Aircraft pose on the runway. theta is the heading error from the
// centreline in radians; positive theta moves the aircraft toward +px.
struct State {
    double px = 0.0;
    double py = 0.0;
    double theta = 0.0;
};

struct StateRate {
    double px = 0.0;
    double py = 0.0;
    double theta = 0.0;
};

struct PlantConfig {
    double v = 5.0;
    double half_width = 10.0;
    double dt = 0.05;
    // Saturation of the steering-law argument; the control set is
    // [-tan(max_steer_arg), tan(max_steer_arg)] rad/s.
    double max_steer_arg = 1.3;

    double u_max() const;
    void validate() const;
};

double clamp_control(double u, const PlantConfig& cfg);

StateRate flow(const State& x, double u, double v);
inline StateRate flow(const State& x, double u, const PlantConfig& cfg) { return flow(x, u, cfg.v); }

// One RK4 step with zero-order-hold control and speed.
State step(const State& x, double u, double v, double dt);
inline State step(const State& x, double u, const PlantConfig& cfg) { return step(x, u, cfg.v, cfg.dt); }

// l(x) = B - |px|; non-positive inside the failure set.
double signed_distance(const State& x, const PlantConfig& cfg);
bool in_failure(const State& x, const PlantConfig& cfg);

struct Command {
    double u = 0.0;
    // Overrides the plant speed for this step when set.
    std::optional<double> speed;
};

using Policy = std::function<Command(const State&, const EnvParams&, double t)>;

struct TrajectorySample {
    double t = 0.0;
    State x;
    double u = 0.0;
    double v = 0.0;
    bool in_failure = false;
};

struct Trajectory {
    std::vector<TrajectorySample> samples;
    std::optional<double> first_failure_time;
    std::optional<std::size_t> first_failure_index;
};

class RolloutError : public std::runtime_error {
public:
    RolloutError(double t, const std::string& what);
    double time() const { return time_; }

private:
    double time_;
};

// Integrates under `policy` for `horizon` seconds. Keeps integrating after
// the first failure so the whole trace can be mined.
Trajectory rollout(const State& x0, const Policy& policy, const EnvParams& env, double horizon,
                   const PlantConfig& cfg);

// Columns: t,px,py,theta_deg,u,v,in_failure
void write_trajectory_csv(std::ostream& out, const Trajectory& traj);

}  // namespace reachguard
