#pragma once

#include <array>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <vector>

#include "reachguard/dynamics.hpp"
#include "reachguard/environment.hpp"

namespace reachguard {

struct AxisSpec {
    double min = 0.0;
    double max = 1.0;
    std::uint32_t count = 3;

    // Symmetric bounds give exactly mirrored node coordinates.
    double node(std::size_t i) const {
        const double n1 = static_cast<double>(count - 1);
        return (static_cast<double>(count - 1 - i) * min + static_cast<double>(i) * max) / n1;
    }
    double spacing() const { return (max - min) / static_cast<double>(count - 1); }
};

// Axes in state order (px, py, theta); theta bounds in radians.
struct GridSpec {
    std::array<AxisSpec, 3> axes;

    // px [-15, 15] x 101, py [100, 250] x 61, theta [-30, 30] deg x 61.
    static GridSpec defaults();

    void validate() const;
    std::size_t size() const {
        return static_cast<std::size_t>(axes[0].count) * axes[1].count * axes[2].count;
    }
    std::size_t index(std::size_t i, std::size_t j, std::size_t k) const {
        return (i * axes[1].count + j) * axes[2].count + k;
    }
    std::array<std::size_t, 3> unravel(std::size_t flat) const;
    State node_state(std::size_t flat) const;
    bool contains(const State& x) const;
    // 2n - 1 nodes per axis: halves every spacing and keeps the old nodes.
    GridSpec refined() const;
};

using StatePolicy = std::function<double(const State&, const EnvParams&)>;

// Control sampled at every node for one environment.
struct PolicyTable {
    GridSpec spec;
    EnvParams env;
    std::vector<float> u;
};

PolicyTable precompute_policy(const GridSpec& spec, const EnvParams& d, const StatePolicy& policy);
PolicyTable zero_policy_table(const GridSpec& spec, const EnvParams& d);

struct GridValue {
    GridSpec spec;
    EnvParams env;
    double horizon = 0.0;
    std::vector<float> values;  // row-major, theta fastest
};

struct SolveOptions {
    double cfl = 0.5;
};

// Time-to-go convention: V(., 0) = l, march to h = horizon with
// V <- min(l, V + dtau * <f, upwind grad V>).
GridValue solve_hjbvi(const GridSpec& spec, const PolicyTable& policy, const PlantConfig& cfg, double horizon,
                      const SolveOptions& opts = {});

// Pseudo-time step used by the solver for this policy.
double cfl_step(const GridSpec& spec, const PolicyTable& policy, const PlantConfig& cfg, double cfl);

// Closed-form value under u = 0: B - max(|px|, |px + v sin(theta) T|).
double analytic_brt_zero_control(const State& x, double horizon, const PlantConfig& cfg);

// Trilinear interpolation; throws OutOfBoundsError outside the grid.
double value_at(const GridValue& gv, const State& x);

// Fraction of nodes with value <= 0.
double brt_volume(const GridValue& gv);

// Fraction restricted to nodes with px > 0 (side = +1) or px < 0 (side = -1).
double brt_volume_side(const GridValue& gv, int side);

// Value slack used when comparing the grid against rollouts:
// 1.5 x the largest cell diagonal measured with the gradient of l.
double consistency_margin(const GridSpec& spec);

// VFGV: "VFGV", u32 version=1, u8 n_dims=3, per dim (f64 min, f64 max,
// u32 count), u8 d1, u8 d2, u8 runway_id, f64 horizon, f32 values.
void write_grid_value(std::ostream& out, const GridValue& gv);
GridValue read_grid_value(std::istream& in);
void save_grid_value(const std::filesystem::path& path, const GridValue& gv);
GridValue load_grid_value(const std::filesystem::path& path);

// Same layout with magic "VFPT" and horizon 0; values are controls.
void save_policy_table(const std::filesystem::path& path, const PolicyTable& table);
PolicyTable load_policy_table(const std::filesystem::path& path);

}  // namespace reachguard
