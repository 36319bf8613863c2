#include <cmath>
#include <sstream>

#include "doctest.h"
#include "reachguard/common.hpp"
#include "reachguard/levelset.hpp"
#include "reachguard/vbc.hpp"

using namespace reachguard;

namespace {

GridSpec small_grid() {
    GridSpec g;
    g.axes[0] = {-15.0, 15.0, 31};
    g.axes[1] = {100.0, 250.0, 7};
    g.axes[2] = {deg_to_rad(-30.0), deg_to_rad(30.0), 13};
    return g;
}

std::size_t node_of(const GridSpec& g, double px, double theta) {
    const auto i = static_cast<std::size_t>(std::lround((px - g.axes[0].min) / g.axes[0].spacing()));
    const auto k = static_cast<std::size_t>(std::lround((theta - g.axes[2].min) / g.axes[2].spacing()));
    return g.index(i, g.axes[1].count / 2, k);
}

GridValue filled(const GridSpec& g, float v) {
    GridValue gv;
    gv.spec = g;
    gv.values.assign(g.size(), v);
    return gv;
}

}  // namespace

TEST_CASE("analytic value under zero control") {
    PlantConfig cfg;
    const double th = deg_to_rad(30.0);
    // 10 - max(8, 8 + 5 sin(30) * 1)
    CHECK(analytic_brt_zero_control(State{8, 150, th}, 1.0, cfg) == doctest::Approx(-0.5));
    CHECK(analytic_brt_zero_control(State{-8, 150, th}, 1.0, cfg) == doctest::Approx(2.0));
    for (double t : {0.0, 1.0, 10.0}) {
        CHECK(analytic_brt_zero_control(State{0, 150, 0}, t, cfg) == doctest::Approx(10.0));
    }
}

TEST_CASE("grid spec") {
    const GridSpec g = GridSpec::defaults();
    CHECK(g.size() == 101u * 61u * 61u);
    CHECK(g.axes[0].node(0) == -15.0);
    CHECK(g.axes[0].node(100) == 15.0);
    CHECK(g.axes[0].node(50) == 0.0);
    const auto ijk = g.unravel(g.index(3, 4, 5));
    CHECK(ijk[0] == 3);
    CHECK(ijk[1] == 4);
    CHECK(ijk[2] == 5);
    const GridSpec r = g.refined();
    CHECK(r.axes[0].count == 201);
    CHECK(r.axes[0].node(2 * 17) == doctest::Approx(g.axes[0].node(17)));
    GridSpec bad = g;
    bad.axes[1].count = 1;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("precompute policy with the state oracle") {
    PlantConfig cfg;
    const GridSpec g = small_grid();
    const StatePolicy oracle = [&](const State& x, const EnvParams&) { return oracle_policy(x, cfg); };
    const PolicyTable t = precompute_policy(g, EnvParams{}, oracle);
    const PolicyTable t2 = precompute_policy(g, EnvParams{}, oracle);
    CHECK(t.u == t2.u);
    for (std::size_t n = 0; n < g.size(); ++n) {
        const State x = g.node_state(n);
        CHECK(t.u[n] == doctest::Approx(p_controller({x.px, x.theta}, cfg)).epsilon(1e-6));
        CHECK(std::abs(t.u[n]) <= cfg.u_max() + 1e-6);
    }
}

TEST_CASE("solver: zero horizon returns l") {
    PlantConfig cfg;
    const GridSpec g = small_grid();
    const GridValue gv = solve_hjbvi(g, zero_policy_table(g, EnvParams{}), cfg, 0.0);
    for (std::size_t n = 0; n < g.size(); ++n) {
        CHECK(gv.values[n] == doctest::Approx(signed_distance(g.node_state(n), cfg)).epsilon(1e-6));
    }
}

TEST_CASE("solver: zero policy at T = 1") {
    PlantConfig cfg;
    const GridSpec g = GridSpec::defaults();
    const PolicyTable zero = zero_policy_table(g, EnvParams{});
    const GridValue v1 = solve_hjbvi(g, zero, cfg, 1.0);
    const double th = deg_to_rad(30.0);
    CHECK(v1.values[node_of(g, 8.1, th)] < 0.0);
    CHECK(v1.values[node_of(g, -8.1, th)] > 0.0);

    SUBCASE("monotone in the horizon") {
        const GridValue v2 = solve_hjbvi(g, zero, cfg, 2.0);
        for (std::size_t n = 0; n < g.size(); ++n) {
            REQUIRE(v2.values[n] <= v1.values[n] + 1e-6f);
        }
    }
    SUBCASE("interpolated values track the closed form") {
        Rng rng(1);
        double worst = 0.0;
        for (int i = 0; i < 1000; ++i) {
            const State x{uniform(rng, -14.5, 14.5), uniform(rng, 105, 245), uniform(rng, -0.5, 0.5)};
            // Paths that leave the px range carry information the grid cannot hold.
            if (std::abs(x.px + cfg.v * std::sin(x.theta)) > 14.5) {
                continue;
            }
            worst = std::max(worst, std::abs(value_at(v1, x) - analytic_brt_zero_control(x, 1.0, cfg)));
        }
        CHECK(worst < 0.5);
    }
}

TEST_CASE("value_at: trilinear interpolation") {
    const GridSpec g = small_grid();
    GridValue gv = filled(g, 0.0f);
    Rng rng(2);
    for (auto& v : gv.values) {
        v = static_cast<float>(uniform(rng, -5, 5));
    }
    const std::size_t n = g.index(4, 3, 7);
    CHECK(value_at(gv, g.node_state(n)) == doctest::Approx(gv.values[n]).epsilon(1e-12));
    const State lo = g.node_state(n);
    const State centre{lo.px + g.axes[0].spacing() / 2, lo.py + g.axes[1].spacing() / 2,
                       lo.theta + g.axes[2].spacing() / 2};
    double corners = 0.0;
    for (std::size_t di = 0; di < 2; ++di) {
        for (std::size_t dj = 0; dj < 2; ++dj) {
            for (std::size_t dk = 0; dk < 2; ++dk) {
                corners += gv.values[g.index(4 + di, 3 + dj, 7 + dk)];
            }
        }
    }
    CHECK(value_at(gv, centre) == doctest::Approx(corners / 8.0).epsilon(1e-9));
    CHECK_THROWS_AS(value_at(gv, State{20, 150, 0}), OutOfBoundsError);
}

TEST_CASE("brt volume") {
    PlantConfig cfg;
    const GridSpec g = GridSpec::defaults();
    CHECK(brt_volume(filled(g, -1.0f)) == 1.0);
    CHECK(brt_volume(filled(g, 1.0f)) == 0.0);

    GridValue l = filled(g, 0.0f);
    std::size_t outside = 0;
    for (std::size_t i = 0; i < g.axes[0].count; ++i) {
        outside += std::abs(g.axes[0].node(i)) >= cfg.half_width ? 1 : 0;
    }
    for (std::size_t n = 0; n < g.size(); ++n) {
        l.values[n] = static_cast<float>(signed_distance(g.node_state(n), cfg));
    }
    // 17 nodes per side at 0.3 m spacing.
    CHECK(outside == 34);
    CHECK(brt_volume(l) == doctest::Approx(34.0 / 101.0));
    CHECK(brt_volume(l) == doctest::Approx(1.0 / 3.0).epsilon(0.02));
    CHECK(brt_volume_side(l, 1) == doctest::Approx(brt_volume_side(l, -1)));

    SUBCASE("relabelling constant axes keeps the volume") {
        GridValue moved = l;
        moved.spec.axes[1] = {0.0, 1.0, g.axes[1].count};
        moved.spec.axes[2] = {-1.0, 1.0, g.axes[2].count};
        CHECK(brt_volume(moved) == brt_volume(l));
    }
}

TEST_CASE("consistency margin and CFL step") {
    const GridSpec g = GridSpec::defaults();
    CHECK(consistency_margin(g) == doctest::Approx(1.5 * g.axes[0].spacing()));
    PlantConfig cfg;
    const double dt = cfl_step(g, zero_policy_table(g, EnvParams{}), cfg, 0.5);
    CHECK(dt > 0.0);
    const double th = g.axes[2].max;
    const double rate = cfg.v * std::sin(th) / g.axes[0].spacing() + cfg.v / g.axes[1].spacing();
    CHECK(dt == doctest::Approx(0.5 / rate).epsilon(1e-12));
    CHECK(cfl_step(g, zero_policy_table(g, EnvParams{}), cfg, 0.25) == doctest::Approx(dt / 2));
}

TEST_CASE("VFGV and VFPT round trips") {
    const GridSpec g = small_grid();
    GridValue gv = filled(g, 0.0f);
    gv.env = {TimeOfDay::night, Cloud::overcast, 2};
    gv.horizon = 3.5;
    Rng rng(3);
    for (auto& v : gv.values) {
        v = static_cast<float>(uniform(rng, -5, 5));
    }
    std::stringstream s;
    write_grid_value(s, gv);
    const std::string bytes = s.str();
    CHECK(bytes.substr(0, 4) == "VFGV");
    // magic, version, n_dims, 3 axes, env, horizon, values
    CHECK(bytes.size() == 4 + 4 + 1 + 3 * 20 + 3 + 8 + 4 * g.size());
    const GridValue back = read_grid_value(s);
    CHECK(back.values == gv.values);
    CHECK(back.env == gv.env);
    CHECK(back.horizon == gv.horizon);
    CHECK(back.spec.axes[2].max == gv.spec.axes[2].max);

    std::stringstream bad("VFMW....");
    CHECK_THROWS_AS(read_grid_value(bad), FormatError);
}
