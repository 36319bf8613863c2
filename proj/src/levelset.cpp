#include "reachguard/levelset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "reachguard/binary_io.hpp"
#include "reachguard/common.hpp"
#include "reachguard/parallel.hpp"

namespace reachguard {

GridSpec GridSpec::defaults() {
    GridSpec s;
    s.axes[0] = {-15.0, 15.0, 101};
    s.axes[1] = {100.0, 250.0, 61};
    s.axes[2] = {deg_to_rad(-30.0), deg_to_rad(30.0), 61};
    return s;
}

void GridSpec::validate() const {
    for (const auto& a : axes) {
        if (a.count < 3 || !(a.min < a.max)) {
            throw ConfigError("grid: every axis needs count >= 3 and min < max");
        }
    }
}

std::array<std::size_t, 3> GridSpec::unravel(std::size_t flat) const {
    const std::size_t k = flat % axes[2].count;
    const std::size_t rest = flat / axes[2].count;
    return {rest / axes[1].count, rest % axes[1].count, k};
}

State GridSpec::node_state(std::size_t flat) const {
    const auto [i, j, k] = unravel(flat);
    return {axes[0].node(i), axes[1].node(j), axes[2].node(k)};
}

bool GridSpec::contains(const State& x) const {
    const std::array<double, 3> c{x.px, x.py, x.theta};
    for (std::size_t d = 0; d < 3; ++d) {
        if (!(c[d] >= axes[d].min && c[d] <= axes[d].max)) {
            return false;
        }
    }
    return true;
}

GridSpec GridSpec::refined() const {
    GridSpec s = *this;
    for (auto& a : s.axes) {
        a.count = 2 * a.count - 1;
    }
    return s;
}

PolicyTable precompute_policy(const GridSpec& spec, const EnvParams& d, const StatePolicy& policy) {
    spec.validate();
    PolicyTable table{spec, d, std::vector<float>(spec.size(), 0.0f)};
    parallel_for(spec.size(), [&](std::size_t n) {
        double u = 0.0;
        try {
            u = policy(spec.node_state(n), d);
        } catch (const std::exception& e) {
            throw ReachError("precompute_policy: node " + std::to_string(n) + ": " + e.what());
        }
        table.u[n] = static_cast<float>(u);
    });
    return table;
}

PolicyTable zero_policy_table(const GridSpec& spec, const EnvParams& d) {
    return {spec, d, std::vector<float>(spec.size(), 0.0f)};
}

double cfl_step(const GridSpec& spec, const PolicyTable& policy, const PlantConfig& cfg, double cfl) {
    double max_u = 0.0;
    for (float u : policy.u) {
        max_u = std::max(max_u, std::abs(static_cast<double>(u)));
    }
    double max_sin = 0.0;
    double max_cos = 0.0;
    for (std::size_t k = 0; k < spec.axes[2].count; ++k) {
        const double th = spec.axes[2].node(k);
        max_sin = std::max(max_sin, std::abs(std::sin(th)));
        max_cos = std::max(max_cos, std::abs(std::cos(th)));
    }
    const double rate = cfg.v * max_sin / spec.axes[0].spacing() + cfg.v * max_cos / spec.axes[1].spacing() +
                        max_u / spec.axes[2].spacing();
    return rate > 0.0 ? cfl / rate : std::numeric_limits<double>::infinity();
}

GridValue solve_hjbvi(const GridSpec& spec, const PolicyTable& policy, const PlantConfig& cfg, double horizon,
                      const SolveOptions& opts) {
    spec.validate();
    if (policy.u.size() != spec.size()) {
        throw DimensionError("solve_hjbvi: policy table does not match grid");
    }
    if (!(horizon >= 0.0)) {
        throw std::invalid_argument("solve_hjbvi: horizon must be >= 0");
    }
    const std::size_t ni = spec.axes[0].count;
    const std::size_t nj = spec.axes[1].count;
    const std::size_t nk = spec.axes[2].count;
    const std::size_t si = nj * nk;
    const std::size_t sj = nk;

    std::vector<double> l(spec.size());
    for (std::size_t i = 0; i < ni; ++i) {
        const double li = cfg.half_width - std::abs(spec.axes[0].node(i));
        std::fill(l.begin() + static_cast<std::ptrdiff_t>(i * si), l.begin() + static_cast<std::ptrdiff_t>((i + 1) * si),
                  li);
    }
    std::vector<double> fx(nk);
    std::vector<double> fy(nk);
    for (std::size_t k = 0; k < nk; ++k) {
        fx[k] = cfg.v * std::sin(spec.axes[2].node(k));
        fy[k] = cfg.v * std::cos(spec.axes[2].node(k));
    }
    const double inv_dx = 1.0 / spec.axes[0].spacing();
    const double inv_dy = 1.0 / spec.axes[1].spacing();
    const double inv_dt = 1.0 / spec.axes[2].spacing();

    std::vector<double> cur = l;
    std::vector<double> next(cur.size());
    std::size_t n_steps = 0;
    double dtau = 0.0;
    if (horizon > 0.0) {
        const double limit = cfl_step(spec, policy, cfg, opts.cfl);
        n_steps = std::isfinite(limit) ? static_cast<std::size_t>(std::ceil(horizon / limit)) : 1;
        dtau = horizon / static_cast<double>(n_steps);
        if (dtau > limit * (1.0 + 1e-12)) {
            throw DivergenceError("solve_hjbvi: CFL condition violated");
        }
    }

    // One-sided upwind difference along a stride. Where the upwind neighbour
    // lies outside the grid the flow leaves the domain; a zero-gradient ghost
    // node is used there, since the interior-side difference would be
    // downwind and unstable.
    auto upwind = [](const std::vector<double>& v, std::size_t n, std::size_t stride, std::size_t pos, std::size_t len,
                     double rate, double inv_h) {
        if (rate > 0.0) {
            return pos + 1 < len ? (v[n + stride] - v[n]) * inv_h : 0.0;
        }
        if (rate < 0.0) {
            return pos > 0 ? (v[n] - v[n - stride]) * inv_h : 0.0;
        }
        return 0.0;
    };

    for (std::size_t step = 0; step < n_steps; ++step) {
        parallel_for(ni, [&](std::size_t i) {
            for (std::size_t j = 0; j < nj; ++j) {
                for (std::size_t k = 0; k < nk; ++k) {
                    const std::size_t n = i * si + j * sj + k;
                    const double fu = policy.u[n];
                    const double ham = fx[k] * upwind(cur, n, si, i, ni, fx[k], inv_dx) +
                                       fy[k] * upwind(cur, n, sj, j, nj, fy[k], inv_dy) +
                                       fu * upwind(cur, n, 1, k, nk, fu, inv_dt);
                    next[n] = std::min(l[n], cur[n] + dtau * ham);
                }
            }
        });
        cur.swap(next);
    }

    GridValue gv{spec, policy.env, horizon, std::vector<float>(spec.size())};
    for (std::size_t n = 0; n < cur.size(); ++n) {
        if (!std::isfinite(cur[n])) {
            throw DivergenceError("solve_hjbvi: nonfinite value at node " + std::to_string(n));
        }
        gv.values[n] = static_cast<float>(cur[n]);
    }
    return gv;
}

double analytic_brt_zero_control(const State& x, double horizon, const PlantConfig& cfg) {
    const double end = x.px + cfg.v * std::sin(x.theta) * horizon;
    return cfg.half_width - std::max(std::abs(x.px), std::abs(end));
}

double value_at(const GridValue& gv, const State& x) {
    const GridSpec& s = gv.spec;
    if (!s.contains(x)) {
        throw OutOfBoundsError("value_at: state outside grid bounds");
    }
    const std::array<double, 3> c{x.px, x.py, x.theta};
    std::array<std::size_t, 3> lo{};
    std::array<double, 3> w{};
    for (std::size_t d = 0; d < 3; ++d) {
        const double pos = (c[d] - s.axes[d].min) / s.axes[d].spacing();
        auto base = static_cast<std::size_t>(std::floor(pos));
        base = std::min<std::size_t>(base, s.axes[d].count - 2);
        lo[d] = base;
        w[d] = std::clamp(pos - static_cast<double>(base), 0.0, 1.0);
    }
    double acc = 0.0;
    for (int corner = 0; corner < 8; ++corner) {
        const std::size_t di = (corner >> 2) & 1;
        const std::size_t dj = (corner >> 1) & 1;
        const std::size_t dk = corner & 1;
        const double weight = (di ? w[0] : 1.0 - w[0]) * (dj ? w[1] : 1.0 - w[1]) * (dk ? w[2] : 1.0 - w[2]);
        if (weight == 0.0) {
            continue;
        }
        acc += weight * gv.values[s.index(lo[0] + di, lo[1] + dj, lo[2] + dk)];
    }
    return acc;
}

double brt_volume(const GridValue& gv) {
    if (gv.values.empty()) {
        return 0.0;
    }
    const auto inside = std::count_if(gv.values.begin(), gv.values.end(), [](float v) { return v <= 0.0f; });
    return static_cast<double>(inside) / static_cast<double>(gv.values.size());
}

double brt_volume_side(const GridValue& gv, int side) {
    std::size_t inside = 0;
    std::size_t total = 0;
    const std::size_t slab = static_cast<std::size_t>(gv.spec.axes[1].count) * gv.spec.axes[2].count;
    for (std::size_t i = 0; i < gv.spec.axes[0].count; ++i) {
        const double px = gv.spec.axes[0].node(i);
        if ((side > 0 && !(px > 0.0)) || (side < 0 && !(px < 0.0))) {
            continue;
        }
        for (std::size_t n = i * slab; n < (i + 1) * slab; ++n) {
            inside += gv.values[n] <= 0.0f ? 1 : 0;
        }
        total += slab;
    }
    return total ? static_cast<double>(inside) / static_cast<double>(total) : 0.0;
}

double consistency_margin(const GridSpec& spec) {
    // grad l = (-sign px, 0, 0): only the px extent of a cell contributes.
    const std::array<double, 3> grad_l{1.0, 0.0, 0.0};
    double diag2 = 0.0;
    for (std::size_t d = 0; d < 3; ++d) {
        diag2 += std::pow(grad_l[d] * spec.axes[d].spacing(), 2);
    }
    return 1.5 * std::sqrt(diag2);
}

namespace {

constexpr std::uint32_t kGridVersion = 1;

void write_grid_common(std::ostream& out, std::string_view magic, const GridSpec& spec, const EnvParams& env,
                       double horizon, const std::vector<float>& values) {
    ByteWriter w(out);
    w.magic(magic);
    w.u32(kGridVersion);
    w.u8(3);
    for (const auto& a : spec.axes) {
        w.f64(a.min);
        w.f64(a.max);
        w.u32(a.count);
    }
    w.u8(static_cast<std::uint8_t>(env.d1));
    w.u8(static_cast<std::uint8_t>(env.d2));
    w.u8(env.runway_id);
    w.f64(horizon);
    for (float v : values) {
        w.f32(v);
    }
}

void read_grid_common(std::istream& in, std::string_view magic, GridSpec& spec, EnvParams& env, double& horizon,
                      std::vector<float>& values) {
    ByteReader r(in, std::string(magic));
    r.expect_magic(magic);
    if (r.u32() != kGridVersion) {
        throw FormatError(std::string(magic) + ": unsupported version");
    }
    if (r.u8() != 3) {
        throw FormatError(std::string(magic) + ": expected 3 dimensions");
    }
    for (auto& a : spec.axes) {
        a.min = r.f64();
        a.max = r.f64();
        a.count = r.u32();
    }
    spec.validate();
    const std::uint8_t d1 = r.u8();
    const std::uint8_t d2 = r.u8();
    if (d1 > 2 || d2 > 1) {
        throw FormatError(std::string(magic) + ": environment code out of range");
    }
    env.d1 = static_cast<TimeOfDay>(d1);
    env.d2 = static_cast<Cloud>(d2);
    env.runway_id = r.u8();
    horizon = r.f64();
    values.resize(spec.size());
    for (auto& v : values) {
        v = r.f32();
    }
}

}  // namespace

void write_grid_value(std::ostream& out, const GridValue& gv) {
    write_grid_common(out, "VFGV", gv.spec, gv.env, gv.horizon, gv.values);
}

GridValue read_grid_value(std::istream& in) {
    GridValue gv;
    read_grid_common(in, "VFGV", gv.spec, gv.env, gv.horizon, gv.values);
    return gv;
}

void save_grid_value(const std::filesystem::path& path, const GridValue& gv) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw ReachError("cannot write " + path.string());
    }
    write_grid_value(out, gv);
}

GridValue load_grid_value(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw MissingPrerequisite("cannot read grid value " + path.string());
    }
    return read_grid_value(in);
}

void save_policy_table(const std::filesystem::path& path, const PolicyTable& table) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw ReachError("cannot write " + path.string());
    }
    write_grid_common(out, "VFPT", table.spec, table.env, 0.0, table.u);
}

PolicyTable load_policy_table(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw MissingPrerequisite("cannot read policy table " + path.string());
    }
    PolicyTable t;
    double horizon = 0.0;
    read_grid_common(in, "VFPT", t.spec, t.env, horizon, t.u);
    return t;
}

}  // namespace reachguard
