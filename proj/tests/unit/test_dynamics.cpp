#include <cmath>
#include <sstream>

#include "doctest.h"
#include "reachguard/common.hpp"
#include "reachguard/dynamics.hpp"

using namespace reachguard;

namespace {

Policy constant_policy(double u) {
    return [u](const State&, const EnvParams&, double) { return Command{u, std::nullopt}; };
}

}  // namespace

TEST_CASE("flow: straight ahead and sideways") {
    PlantConfig cfg;
    const StateRate a = flow(State{0, 0, 0}, 0.0, cfg);
    CHECK(a.px == doctest::Approx(0.0));
    CHECK(a.py == doctest::Approx(5.0));
    CHECK(a.theta == doctest::Approx(0.0));
    const StateRate b = flow(State{0, 0, kPi / 2}, 0.0, cfg);
    CHECK(b.px == doctest::Approx(5.0));
    CHECK(b.py == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("flow at 30 degrees matches v sin, v cos") {
    const StateRate r = flow(State{0, 0, kPi / 6}, 0.1, PlantConfig{});
    CHECK(r.px == doctest::Approx(2.5));
    CHECK(r.py == doctest::Approx(4.33013).epsilon(1e-6));
    CHECK(r.theta == doctest::Approx(0.1));
}

TEST_CASE("property: planar speed equals v") {
    Rng rng(3);
    for (int i = 0; i < 500; ++i) {
        const State x{uniform(rng, -20, 20), uniform(rng, 0, 300), uniform(rng, -kPi, kPi)};
        const double v = uniform(rng, 0, 10);
        const StateRate r = flow(x, uniform(rng, -4, 4), v);
        CHECK(std::hypot(r.px, r.py) == doctest::Approx(v).epsilon(1e-12));
    }
}

TEST_CASE("step: straight-line motion is exact") {
    const State x = step(State{1.0, 100.0, 0.0}, 0.0, 5.0, 0.1);
    CHECK(x.px == 1.0);
    CHECK(x.py == doctest::Approx(100.5).epsilon(1e-15));
    CHECK(x.theta == 0.0);
}

TEST_CASE("step: constant turn rate follows the circular arc") {
    // Oracle: px = px0 + (v/c)(cos th0 - cos(th0 + c t)), py = py0 + (v/c)(sin(th0 + c t) - sin th0).
    const double v = 5.0;
    const double c = 0.7;
    const double th0 = 0.2;
    State x{1.0, 50.0, th0};
    for (int k = 0; k < 100; ++k) {
        x = step(x, c, v, 0.01);
    }
    const double t = 1.0;
    CHECK(x.px == doctest::Approx(1.0 + v / c * (std::cos(th0) - std::cos(th0 + c * t))).epsilon(1e-9));
    CHECK(std::abs(x.py - (50.0 + v / c * (std::sin(th0 + c * t) - std::sin(th0)))) < 1e-6);
    CHECK(std::abs(x.theta - (th0 + c * t)) < 1e-12);
}

TEST_CASE("step: local error shrinks at fifth order") {
    auto local_error = [](double dt) {
        const State x0{0.0, 0.0, 0.3};
        const State one = step(x0, 2.0, 5.0, dt);
        const State two = step(step(x0, 2.0, 5.0, dt / 2), 2.0, 5.0, dt / 2);
        return std::hypot(one.px - two.px, one.py - two.py);
    };
    const double e1 = local_error(0.1);
    const double e2 = local_error(0.05);
    // Ratio 2^5 = 32 for a fifth-order local error.
    CHECK(e1 / e2 > 25.0);
    CHECK(e1 / e2 < 40.0);
}

TEST_CASE("property: heading stays in (-pi, pi]") {
    State x{0, 0, 3.0};
    for (int k = 0; k < 400; ++k) {
        x = step(x, 3.5, 5.0, 0.05);
        REQUIRE(std::abs(x.theta) <= kPi);
    }
}

TEST_CASE("signed distance") {
    PlantConfig cfg;
    CHECK(signed_distance(State{0, 0, 0}, cfg) == 10.0);
    CHECK(signed_distance(State{10, 0, 0}, cfg) == 0.0);
    CHECK(signed_distance(State{-12, 0, 0}, cfg) == -2.0);
    CHECK(in_failure(State{10, 0, 0}, cfg));
    CHECK_FALSE(in_failure(State{9.99, 0, 0}, cfg));
}

TEST_CASE("control clamp") {
    PlantConfig cfg;
    CHECK(cfg.u_max() == doctest::Approx(std::tan(1.3)));
    CHECK(clamp_control(100.0, cfg) == doctest::Approx(std::tan(1.3)));
    CHECK(clamp_control(-100.0, cfg) == doctest::Approx(-std::tan(1.3)));
    CHECK(clamp_control(0.3, cfg) == 0.3);
    PlantConfig bad;
    bad.max_steer_arg = 2.0;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("rollout: centreline start never fails") {
    PlantConfig cfg;
    const Trajectory tr = rollout(State{0, 100, 0}, constant_policy(0.0), EnvParams{}, 10.0, cfg);
    CHECK_FALSE(tr.first_failure_time.has_value());
    CHECK(tr.samples.size() == 201);
    for (const auto& s : tr.samples) {
        CHECK(s.x.px == 0.0);
    }
}

TEST_CASE("rollout: heading out at 30 degrees fails at t = 0.8") {
    // px(t) = 8 + 2.5 t reaches 10 at t = 0.8.
    PlantConfig cfg;
    const Trajectory tr = rollout(State{8, 100, kPi / 6}, constant_policy(0.0), EnvParams{}, 10.0, cfg);
    REQUIRE(tr.first_failure_time.has_value());
    CHECK(std::abs(*tr.first_failure_time - 0.8) <= cfg.dt + 1e-9);
}

TEST_CASE("property: rollouts are deterministic and failure labels persist") {
    PlantConfig cfg;
    Rng rng(11);
    for (int i = 0; i < 20; ++i) {
        const State x0{uniform(rng, -9, 9), 100, uniform(rng, -0.5, 0.5)};
        const double u = uniform(rng, -1, 1);
        const Trajectory a = rollout(x0, constant_policy(u), EnvParams{}, 5.0, cfg);
        const Trajectory b = rollout(x0, constant_policy(u), EnvParams{}, 5.0, cfg);
        REQUIRE(a.samples.size() == b.samples.size());
        for (std::size_t k = 0; k < a.samples.size(); ++k) {
            CHECK(a.samples[k].x.px == b.samples[k].x.px);
            CHECK(a.samples[k].x.theta == b.samples[k].x.theta);
        }
        if (a.first_failure_index) {
            bool seen = false;
            for (std::size_t k = 0; k < a.samples.size(); ++k) {
                seen = seen || a.samples[k].in_failure;
                CHECK(seen == (k >= *a.first_failure_index));
            }
        }
    }
}

TEST_CASE("trajectory CSV header") {
    PlantConfig cfg;
    const Trajectory tr = rollout(State{0, 100, 0}, constant_policy(0.0), EnvParams{}, 0.1, cfg);
    std::ostringstream out;
    write_trajectory_csv(out, tr);
    CHECK(out.str().rfind("t,px,py,theta_deg,u,v,in_failure\n", 0) == 0);
}
