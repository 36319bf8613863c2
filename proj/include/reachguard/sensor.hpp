#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "reachguard/dynamics.hpp"
#include "reachguard/environment.hpp"

namespace reachguard {

struct CameraConfig {
    // Displacement toward the right wing, metres.
    double lateral_offset = 2.0;
    double height = 2.5;
    // Downward pitch of the optical axis, radians.
    double pitch = 0.26;
    double focal = 16.0;
    int width = 32;
    int height_px = 24;
    // Samples per pixel edge used by the rasterizer.
    int supersample = 2;

    void validate() const;
    std::size_t pixel_count() const { return static_cast<std::size_t>(width) * static_cast<std::size_t>(height_px); }
};

struct Observation {
    int width = 0;
    int height = 0;
    std::vector<float> pixels;  // row-major, [0, 1]
    std::optional<State> state;
    std::optional<EnvParams> env;

    float at(int col, int row) const { return pixels[static_cast<std::size_t>(row) * width + col]; }
};

struct Interval {
    double begin = 0.0;
    double end = 0.0;
    bool contains(double y) const { return y >= begin && y <= end; }
};

struct RunwayProfile {
    std::string name;
    double half_width = 10.0;
    double centerline_width = 0.9;
    double edge_line_width = 0.3;
    // Side-strip markings: painted stripes that look like the centreline,
    // present only over the given downtrack intervals.
    std::vector<Interval> side_strips;
    std::vector<double> strip_offsets;
    double strip_width = 0.9;
    double edge_light_spacing = 15.0;
    double light_radius = 0.5;
    double asphalt = 0.40;
    double paint = 0.90;
    double grass = 0.22;
    double sky = 0.75;
    bool training = true;

    void validate() const;
};

// Five profiles: ids 0-2 are training runways, 3-4 held out.
const std::vector<RunwayProfile>& runway_catalog();
const RunwayProfile& runway_profile(std::uint8_t runway_id);

struct PixelCoord {
    double col = 0.0;
    double row = 0.0;
};

struct Vec3 {
    double x = 0.0;
    double y = 0.0;
    double z = 0.0;
};

struct CameraPose {
    Vec3 position;
    Vec3 right;
    Vec3 down;
    Vec3 forward;
};

CameraPose camera_pose(const State& x, const CameraConfig& cam);

// Continuous pixel coordinates; pixel (i, j) spans [i, i+1) x [j, j+1) and
// the optical axis hits (width/2, height_px/2).
std::optional<PixelCoord> project(double ground_x, double ground_y, const State& x, const CameraConfig& cam);

// Full-intensity coverage of night edge lights, one entry per pixel.
struct RawFrame {
    Observation image;
    std::vector<float> light_coverage;
};

RawFrame render_raw(const State& x, const EnvParams& d, const CameraConfig& cam, const RunwayProfile& profile);

// Affine intensity map for (d1, d2), clipped to [0, 1]; composites light
// sprites when coverage is supplied and d1 is night.
Observation apply_lighting(const Observation& raw, const EnvParams& d, std::span<const float> light_coverage = {});

Observation render(const State& x, const EnvParams& d, const CameraConfig& cam, const RunwayProfile& profile);

// Horizontal flip.
Observation mirror(const Observation& obs);

// Camera plus runway catalog: the map S(x, d) -> I.
struct Sensor {
    CameraConfig camera;
    std::vector<RunwayProfile> catalog = runway_catalog();

    const RunwayProfile& profile(std::uint8_t runway_id) const;
    Observation render(const State& x, const EnvParams& d) const {
        return reachguard::render(x, d, camera, profile(d.runway_id));
    }
};

struct LightingMap {
    double gain = 1.0;
    double offset = 0.0;
};
LightingMap lighting_map(const EnvParams& d);

}  // namespace reachguard
