#include <cmath>
#include <numeric>

#include <Eigen/Dense>

#include "doctest.h"
#include "reachguard/common.hpp"
#include "reachguard/sensor.hpp"

using namespace reachguard;

namespace {

double mean(const Observation& o) {
    return std::accumulate(o.pixels.begin(), o.pixels.end(), 0.0) / static_cast<double>(o.pixels.size());
}

double stddev(const Observation& o) {
    const double m = mean(o);
    double s = 0.0;
    for (float p : o.pixels) {
        s += (p - m) * (p - m);
    }
    return std::sqrt(s / static_cast<double>(o.pixels.size()));
}

Observation uniform_image(float value) {
    Observation o;
    o.width = 32;
    o.height = 24;
    o.pixels.assign(32 * 24, value);
    return o;
}

}  // namespace

TEST_CASE("project: optical axis lands on the image centre") {
    CameraConfig cam;
    const State x{1.0, 120.0, 0.0};
    const CameraPose pose = camera_pose(x, cam);
    // Ground hit of the optical axis.
    const double t = cam.height / std::sin(cam.pitch);
    const auto p = project(pose.position.x + t * pose.forward.x, pose.position.y + t * pose.forward.y, x, cam);
    REQUIRE(p.has_value());
    CHECK(p->col == doctest::Approx(cam.width / 2.0));
    CHECK(p->row == doctest::Approx(cam.height_px / 2.0));
}

TEST_CASE("project: centred camera mirrors lateral points") {
    CameraConfig cam;
    cam.lateral_offset = 0.0;
    const State x{0.0, 100.0, 0.0};
    for (double a : {0.5, 2.0, 4.0}) {
        const auto r = project(a, 130.0, x, cam);
        const auto l = project(-a, 130.0, x, cam);
        REQUIRE(r.has_value());
        REQUIRE(l.has_value());
        CHECK(r->col - cam.width / 2.0 == doctest::Approx(cam.width / 2.0 - l->col));
        CHECK(r->row == doctest::Approx(l->row));
    }
}

TEST_CASE("project: matches an independent rotation-matrix camera") {
    CameraConfig cam;
    const State x{1.5, 120.0, 0.1};
    const double gx = 3.0;
    const double gy = 150.0;
    // Level camera looking down +y, pitched down, then yawed clockwise by theta.
    const double sp = std::sin(cam.pitch);
    const double cp = std::cos(cam.pitch);
    Eigen::Matrix3d base;
    base.row(0) << 1, 0, 0;      // right
    base.row(1) << 0, -sp, -cp;  // down
    base.row(2) << 0, cp, -sp;   // forward
    const Eigen::Matrix3d yaw = Eigen::AngleAxisd(-x.theta, Eigen::Vector3d::UnitZ()).toRotationMatrix();
    const Eigen::Matrix3d r = base * yaw.transpose();
    const Eigen::Vector3d centre = Eigen::Vector3d(x.px, x.py, cam.height) +
                                   cam.lateral_offset * (yaw * Eigen::Vector3d::UnitX());
    const Eigen::Vector3d pc = r * (Eigen::Vector3d(gx, gy, 0.0) - centre);
    Eigen::Matrix3d k;
    k << cam.focal, 0, cam.width / 2.0, 0, cam.focal, cam.height_px / 2.0, 0, 0, 1;
    const Eigen::Vector3d uv = k * pc / pc.z();
    const auto p = project(gx, gy, x, cam);
    REQUIRE(p.has_value());
    CHECK(p->col == doctest::Approx(uv.x()).epsilon(1e-12));
    CHECK(p->row == doctest::Approx(uv.y()).epsilon(1e-12));
}

TEST_CASE("project: points behind the camera are not visible") {
    CameraConfig cam;
    CHECK_FALSE(project(0.0, 90.0, State{0, 100, 0}, cam).has_value());
}

TEST_CASE("render: centred camera gives mirrored frames") {
    CameraConfig cam;
    cam.lateral_offset = 0.0;
    const RunwayProfile& rw = runway_profile(0);
    for (double a : {1.0, 3.5, 7.0}) {
        for (TimeOfDay d1 : {TimeOfDay::morning, TimeOfDay::night}) {
            const EnvParams d{d1, Cloud::clear, 0};
            const Observation right = render(State{a, 160, 0}, d, cam, rw);
            const Observation left = mirror(render(State{-a, 160, 0}, d, cam, rw));
            for (std::size_t i = 0; i < right.pixels.size(); ++i) {
                REQUIRE(right.pixels[i] == doctest::Approx(left.pixels[i]).epsilon(1e-6));
            }
        }
    }
}

TEST_CASE("render: wing camera breaks the mirror symmetry") {
    CameraConfig cam;
    const RunwayProfile& rw = runway_profile(0);
    const Observation right = render(State{3, 160, 0}, EnvParams{}, cam, rw);
    const Observation left = mirror(render(State{-3, 160, 0}, EnvParams{}, cam, rw));
    double diff = 0.0;
    for (std::size_t i = 0; i < right.pixels.size(); ++i) {
        diff = std::max(diff, static_cast<double>(std::abs(right.pixels[i] - left.pixels[i])));
    }
    CHECK(diff > 0.05);
}

TEST_CASE("render: night is darker than morning") {
    CameraConfig cam;
    for (std::uint8_t r = 0; r < 5; ++r) {
        const auto& rw = runway_profile(r);
        const State x{0.5, 140, 0.05};
        CHECK(mean(render(x, {TimeOfDay::night, Cloud::clear, r}, cam, rw)) <
              mean(render(x, {TimeOfDay::morning, Cloud::clear, r}, cam, rw)));
    }
}

TEST_CASE("render: side-strip marking shows up off centre") {
    CameraConfig cam;
    RunwayProfile with = runway_profile(0);
    REQUIRE_FALSE(with.side_strips.empty());
    RunwayProfile without = with;
    without.side_strips.clear();
    const State x{0.0, with.side_strips[0].begin - 15.0, 0.0};
    const double stripe_x = with.strip_offsets[0];
    const auto p = project(stripe_x, with.side_strips[0].begin + 5.0, x, cam);
    REQUIRE(p.has_value());
    CHECK(std::abs(p->col - cam.width / 2.0) >= 1.0);
    const Observation a = render(x, EnvParams{}, cam, with);
    const Observation b = render(x, EnvParams{}, cam, without);
    const std::size_t idx = static_cast<std::size_t>(p->row) * cam.width + static_cast<std::size_t>(p->col);
    CHECK(a.pixels[idx] > b.pixels[idx] + 0.1);

    SUBCASE("and is dimmer at night") {
        const Observation n = render(x, {TimeOfDay::night, Cloud::clear, 0}, cam, with);
        CHECK(n.pixels[idx] < a.pixels[idx]);
    }
}

TEST_CASE("property: pixels stay in [0, 1] and rendering is pure") {
    Sensor sensor;
    Rng rng(5);
    for (int i = 0; i < 60; ++i) {
        const State x{uniform(rng, -15, 15), uniform(rng, 100, 250), uniform(rng, -0.5, 0.5)};
        const EnvParams d{static_cast<TimeOfDay>(i % 3), static_cast<Cloud>(i % 2), static_cast<std::uint8_t>(i % 5)};
        const Observation a = sensor.render(x, d);
        const Observation b = sensor.render(x, d);
        CHECK(a.pixels == b.pixels);
        for (float p : a.pixels) {
            REQUIRE(p >= 0.0f);
            REQUIRE(p <= 1.0f);
        }
    }
}

TEST_CASE("lighting map") {
    const Observation img = uniform_image(0.8f);
    SUBCASE("morning clear is the identity") {
        Observation g = img;
        for (std::size_t i = 0; i < g.pixels.size(); ++i) {
            g.pixels[i] = static_cast<float>(i % 7) / 7.0f;
        }
        CHECK(apply_lighting(g, EnvParams{}).pixels == g.pixels);
    }
    SUBCASE("night scales by 0.25") {
        const Observation out = apply_lighting(img, {TimeOfDay::night, Cloud::clear, 0});
        for (float p : out.pixels) {
            CHECK(p == doctest::Approx(0.2));
        }
    }
    SUBCASE("overcast lowers contrast") {
        const Observation frame = render(State{2, 150, 0.1}, EnvParams{}, CameraConfig{}, runway_profile(0));
        const Observation dull = apply_lighting(frame, {TimeOfDay::morning, Cloud::overcast, 0});
        CHECK(stddev(dull) <= stddev(frame));
        CHECK(stddev(dull) == doctest::Approx(0.7 * stddev(frame)).epsilon(1e-4));
    }
}

TEST_CASE("runway catalog") {
    const auto& cat = runway_catalog();
    REQUIRE(cat.size() == 5);
    int training = 0;
    for (const auto& r : cat) {
        CHECK_NOTHROW(r.validate());
        training += r.training ? 1 : 0;
    }
    CHECK(training == 3);
    CHECK_THROWS_AS(runway_profile(5), ConfigError);
    RunwayProfile bad = cat[0];
    bad.strip_offsets = {9.8};
    CHECK_THROWS_AS(bad.validate(), ConfigError);
}
