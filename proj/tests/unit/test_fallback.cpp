#include <sstream>

#include "doctest.h"
#include "reachguard/common.hpp"
#include "reachguard/fallback.hpp"

using namespace reachguard;

namespace {

struct Fixture {
    PlantConfig cfg;
    Sensor sensor;
    EstimatorParams est;

    Fixture() {
        sensor.camera.supersample = 1;
        est = make_estimator(sensor.camera.pixel_count(), {8}, sensor.camera.lateral_offset);
    }

    PipelineSpec spec(Detector det, FallbackMode mode = {}) const {
        return {&sensor, &est, std::move(det), mode, 3};
    }
};

const Detector never = [](const Observation&) { return 0; };
const Detector always = [](const Observation&) { return 1; };

bool same(const Trajectory& a, const Trajectory& b) {
    if (a.samples.size() != b.samples.size()) {
        return false;
    }
    for (std::size_t i = 0; i < a.samples.size(); ++i) {
        const auto& p = a.samples[i];
        const auto& q = b.samples[i];
        if (p.x.px != q.x.px || p.x.py != q.x.py || p.x.theta != q.x.theta || p.u != q.u || p.v != q.v) {
            return false;
        }
    }
    return true;
}

}  // namespace

TEST_CASE("a silent detector leaves the VBC untouched") {
    Fixture f;
    const SeedState s{State{2.0, 120.0, 0.1}, EnvParams{}};
    const Trajectory bare = rollout(s.x, make_vbc_policy(f.sensor, f.est, f.cfg), s.d, 3.0, f.cfg);
    std::size_t act = 7;
    const Trajectory piped = pipeline_rollout(s, f.spec(never), f.cfg, 3.0, 11, &act);
    CHECK(same(bare, piped));
    CHECK(act == 0);
}

TEST_CASE("noise-free GPS fallback is the oracle law") {
    Fixture f;
    FallbackMode m;
    m.gps_sigma = 0.0;
    const SeedState s{State{-4.0, 120.0, -0.2}, EnvParams{}};
    const Policy oracle = [&](const State& x, const EnvParams&, double) { return Command{oracle_policy(x, f.cfg), {}}; };
    const Trajectory want = rollout(s.x, oracle, s.d, 3.0, f.cfg);
    std::size_t act = 0;
    const Trajectory got = pipeline_rollout(s, f.spec(always, m), f.cfg, 3.0, 1, &act);
    REQUIRE(want.samples.size() == got.samples.size());
    for (std::size_t i = 0; i < got.samples.size(); ++i) {
        CHECK(got.samples[i].x.px == doctest::Approx(want.samples[i].x.px).epsilon(1e-12));
        CHECK(got.samples[i].x.theta == doctest::Approx(want.samples[i].x.theta).epsilon(1e-12));
    }
    CHECK(act == got.samples.size() - 1);
}

TEST_CASE("velocity fallback") {
    FallbackMode m;
    m.variant = FallbackVariant::velocity;
    PipelineState ps;
    CHECK(velocity_fallback(ps, 1, m) == doctest::Approx(4.99));
    CHECK(velocity_fallback(ps, 0, m) == doctest::Approx(4.99));
    for (int i = 0; i < 99; ++i) {
        velocity_fallback(ps, 1, m);
    }
    CHECK(ps.v == doctest::Approx(4.0));
    for (int i = 0; i < 500; ++i) {
        velocity_fallback(ps, 1, m);
    }
    CHECK(ps.v == 0.0);

    Fixture f;
    const SeedState s{State{1.0, 120.0, 0.05}, EnvParams{}};
    const Trajectory tr = pipeline_rollout(s, f.spec(always, m), f.cfg, 2.0, 1);
    for (std::size_t i = 1; i + 1 < tr.samples.size(); ++i) {
        CHECK(tr.samples[i].v <= tr.samples[i - 1].v);
    }
    // Speed only drops, so the aircraft covers less ground than at v.
    CHECK(tr.samples.back().x.py - s.x.py < f.cfg.v * 2.0);
    CHECK(parse_fallback_variant("velocity") == FallbackVariant::velocity);
    CHECK_THROWS_AS(parse_fallback_variant("brake"), ConfigError);
}

TEST_CASE("GPS noise") {
    PlantConfig cfg;
    Rng a(5);
    CHECK(gps_fallback(State{}, 0.0, a, cfg) == 0.0);
    Rng b(9);
    Rng c(9);
    const State x{0.2, 0.0, 0.01};
    CHECK(gps_fallback(x, 1.0, b, cfg) == gps_fallback(x, 1.0, c, cfg));
    Rng d(9);
    CHECK(gps_fallback(x, 1.0, d, cfg) != oracle_policy(x, cfg));
}

TEST_CASE("unsafe fraction") {
    Fixture f;
    const std::vector<SeedState> safe{{State{0, 120, 0}, EnvParams{}}, {State{1, 130, -0.05}, EnvParams{}}};
    FallbackMode m;
    m.gps_sigma = 0.0;
    CHECK(empirical_unsafe_fraction(ControllerKind::pipeline, safe, f.spec(always, m), f.cfg, 2.0).unsafe_fraction ==
          0.0);

    // A blind estimator with a centred camera steers straight; over grid
    // nodes the bare fraction should match the zero-policy BRT volume.
    Fixture z;
    z.est = make_estimator(z.sensor.camera.pixel_count(), {8}, 0.0);
    std::fill(z.est.net.params().begin(), z.est.net.params().end(), 0.0);
    GridSpec g;
    g.axes[0] = {-15.0, 15.0, 31};
    g.axes[1] = {100.0, 130.0, 3};
    g.axes[2] = {deg_to_rad(-30.0), deg_to_rad(30.0), 13};
    const GridValue gv = solve_hjbvi(g, zero_policy_table(g, EnvParams{}), z.cfg, 1.0);
    std::vector<SeedState> nodes;
    for (std::size_t n = 0; n < g.size(); ++n) {
        nodes.push_back({g.node_state(n), EnvParams{}});
    }
    const UnsafeReport bare = empirical_unsafe_fraction(ControllerKind::bare, nodes, z.spec(never), z.cfg, 1.0);
    CHECK(std::abs(bare.unsafe_fraction - brt_volume(gv)) < 0.03);
    REQUIRE(bare.rows.size() == 2);
    CHECK(bare.rows.back().env == "all");
    CHECK(bare.rows.back().n == nodes.size());

    // The exact-state fallback never does worse than driving blind.
    const UnsafeReport guarded =
        empirical_unsafe_fraction(ControllerKind::pipeline, nodes, z.spec(always, m), z.cfg, 1.0);
    CHECK(guarded.unsafe_fraction <= bare.unsafe_fraction);
    CHECK(guarded.rows.back().mean_activations > 0.0);

    std::ostringstream with, without;
    write_comparison_csv(with, guarded.rows);
    write_comparison_csv(without, guarded.rows, false);
    CHECK(with.str().rfind("controller,env,unsafe_fraction,n,mean_activations,steps_per_sec\n", 0) == 0);
    CHECK(without.str().rfind("controller,env,unsafe_fraction,n,mean_activations\n", 0) == 0);
    CHECK_THROWS_AS(empirical_unsafe_fraction(ControllerKind::bare, {}, z.spec(never), z.cfg, 1.0),
                    std::invalid_argument);
}
