#include "reachguard/sensor.hpp"

#include <algorithm>
#include <cmath>

#include "reachguard/common.hpp"

namespace reachguard {

namespace {

Vec3 add(const Vec3& a, const Vec3& b) { return {a.x + b.x, a.y + b.y, a.z + b.z}; }
Vec3 scale(const Vec3& a, double s) { return {a.x * s, a.y * s, a.z * s}; }
double dot(const Vec3& a, const Vec3& b) { return a.x * b.x + a.y * b.y + a.z * b.z; }

std::vector<RunwayProfile> build_catalog() {
    std::vector<RunwayProfile> out(5);
    out[0].name = "rw-a";
    out[0].side_strips = {{150.0, 185.0}};
    out[0].strip_offsets = {-6.0, 6.0};
    out[0].asphalt = 0.40;
    out[0].edge_light_spacing = 15.0;

    out[1].name = "rw-b";
    out[1].asphalt = 0.34;
    out[1].edge_light_spacing = 12.0;

    out[2].name = "rw-c";
    out[2].side_strips = {{205.0, 230.0}};
    out[2].strip_offsets = {-6.0, 6.0};
    out[2].asphalt = 0.46;
    out[2].edge_light_spacing = 18.0;

    out[3].name = "rw-d";
    out[3].side_strips = {{120.0, 160.0}};
    out[3].strip_offsets = {-6.5, 6.5};
    out[3].asphalt = 0.30;
    out[3].training = false;

    out[4].name = "rw-e";
    out[4].asphalt = 0.50;
    out[4].centerline_width = 0.7;
    out[4].edge_light_spacing = 20.0;
    out[4].training = false;
    return out;
}

}  // namespace

void CameraConfig::validate() const {
    if (!(focal > 0.0) || width < 8 || height_px < 8 || supersample < 1 || !(height > 0.0)) {
        throw ConfigError("camera: require focal > 0, pixel dims >= 8, height > 0, supersample >= 1");
    }
}

void RunwayProfile::validate() const {
    if (!(half_width > 0.0)) {
        throw ConfigError("runway " + name + ": half_width must be positive");
    }
    for (double off : strip_offsets) {
        if (std::abs(off) + strip_width / 2.0 > half_width) {
            throw ConfigError("runway " + name + ": side strip outside the runway");
        }
    }
    for (const auto& iv : side_strips) {
        if (!(iv.begin < iv.end)) {
            throw ConfigError("runway " + name + ": empty side-strip interval");
        }
    }
}

const std::vector<RunwayProfile>& runway_catalog() {
    static const std::vector<RunwayProfile> catalog = build_catalog();
    return catalog;
}

const RunwayProfile& runway_profile(std::uint8_t runway_id) {
    const auto& cat = runway_catalog();
    if (runway_id >= cat.size()) {
        throw ConfigError("runway id " + std::to_string(runway_id) + " outside catalog");
    }
    return cat[runway_id];
}

const RunwayProfile& Sensor::profile(std::uint8_t runway_id) const {
    if (runway_id >= catalog.size()) {
        throw ConfigError("runway id " + std::to_string(runway_id) + " outside catalog");
    }
    return catalog[runway_id];
}

CameraPose camera_pose(const State& x, const CameraConfig& cam) {
    const double s = std::sin(x.theta);
    const double c = std::cos(x.theta);
    const double sp = std::sin(cam.pitch);
    const double cp = std::cos(cam.pitch);
    CameraPose pose;
    pose.right = {c, -s, 0.0};
    pose.forward = {s * cp, c * cp, -sp};
    // down = forward x right
    pose.down = {pose.forward.y * pose.right.z - pose.forward.z * pose.right.y,
                 pose.forward.z * pose.right.x - pose.forward.x * pose.right.z,
                 pose.forward.x * pose.right.y - pose.forward.y * pose.right.x};
    pose.position = {x.px + cam.lateral_offset * c, x.py - cam.lateral_offset * s, cam.height};
    return pose;
}

std::optional<PixelCoord> project(double ground_x, double ground_y, const State& x, const CameraConfig& cam) {
    const CameraPose pose = camera_pose(x, cam);
    const Vec3 rel{ground_x - pose.position.x, ground_y - pose.position.y, -pose.position.z};
    const double zc = dot(rel, pose.forward);
    if (zc <= 0.0) {
        return std::nullopt;
    }
    const double col = cam.width / 2.0 + cam.focal * dot(rel, pose.right) / zc;
    const double row = cam.height_px / 2.0 + cam.focal * dot(rel, pose.down) / zc;
    if (col < 0.0 || col >= cam.width || row < 0.0 || row >= cam.height_px) {
        return std::nullopt;
    }
    return PixelCoord{col, row};
}

namespace {

double ground_albedo(double gx, double gy, const RunwayProfile& rw) {
    const double ax = std::abs(gx);
    if (ax > rw.half_width) {
        return rw.grass;
    }
    for (const auto& iv : rw.side_strips) {
        if (!iv.contains(gy)) {
            continue;
        }
        for (double off : rw.strip_offsets) {
            if (std::abs(gx - off) <= rw.strip_width / 2.0) {
                return rw.paint;
            }
        }
    }
    if (ax <= rw.centerline_width / 2.0 || ax >= rw.half_width - rw.edge_line_width) {
        return rw.paint;
    }
    return rw.asphalt;
}

bool on_light(double gx, double gy, const RunwayProfile& rw) {
    if (std::abs(gx) > rw.light_radius) {
        return false;
    }
    const double k = std::round(gy / rw.edge_light_spacing);
    const double dy = gy - k * rw.edge_light_spacing;
    return gx * gx + dy * dy <= rw.light_radius * rw.light_radius;
}

}  // namespace

RawFrame render_raw(const State& x, const EnvParams& d, const CameraConfig& cam, const RunwayProfile& profile) {
    const CameraPose pose = camera_pose(x, cam);
    const int ss = cam.supersample;
    const double inv_samples = 1.0 / static_cast<double>(ss * ss);
    const bool night = d.d1 == TimeOfDay::night;

    RawFrame frame;
    frame.image.width = cam.width;
    frame.image.height = cam.height_px;
    frame.image.pixels.assign(cam.pixel_count(), 0.0f);
    frame.image.state = x;
    frame.image.env = d;
    frame.light_coverage.assign(night ? cam.pixel_count() : 0, 0.0f);

    for (int row = 0; row < cam.height_px; ++row) {
        for (int col = 0; col < cam.width; ++col) {
            double acc = 0.0;
            double lit = 0.0;
            for (int sy = 0; sy < ss; ++sy) {
                for (int sx = 0; sx < ss; ++sx) {
                    const double a = (col + (sx + 0.5) / ss - cam.width / 2.0) / cam.focal;
                    const double b = (row + (sy + 0.5) / ss - cam.height_px / 2.0) / cam.focal;
                    const Vec3 dir = add(pose.forward, add(scale(pose.right, a), scale(pose.down, b)));
                    if (dir.z >= 0.0) {
                        acc += profile.sky;
                        continue;
                    }
                    const double t = -pose.position.z / dir.z;
                    const double gx = pose.position.x + t * dir.x;
                    const double gy = pose.position.y + t * dir.y;
                    acc += ground_albedo(gx, gy, profile);
                    if (night && on_light(gx, gy, profile)) {
                        lit += 1.0;
                    }
                }
            }
            const std::size_t idx = static_cast<std::size_t>(row) * cam.width + col;
            frame.image.pixels[idx] = static_cast<float>(acc * inv_samples);
            if (night) {
                frame.light_coverage[idx] = static_cast<float>(lit * inv_samples);
            }
        }
    }
    return frame;
}

LightingMap lighting_map(const EnvParams& d) {
    LightingMap m;
    switch (d.d1) {
        case TimeOfDay::morning:
            m.gain = 1.0;
            break;
        case TimeOfDay::evening:
            m.gain = 0.6;
            break;
        case TimeOfDay::night:
            m.gain = 0.25;
            break;
    }
    if (d.d2 == Cloud::overcast) {
        m.gain *= 0.7;
        m.offset = 0.05;
    }
    return m;
}

Observation apply_lighting(const Observation& raw, const EnvParams& d, std::span<const float> light_coverage) {
    const LightingMap m = lighting_map(d);
    const bool composite = d.d1 == TimeOfDay::night && light_coverage.size() == raw.pixels.size();
    Observation out = raw;
    for (std::size_t i = 0; i < out.pixels.size(); ++i) {
        double y = std::clamp(m.gain * raw.pixels[i] + m.offset, 0.0, 1.0);
        if (composite) {
            const double cov = light_coverage[i];
            y = y * (1.0 - cov) + cov;
        }
        out.pixels[i] = static_cast<float>(y);
    }
    return out;
}

Observation render(const State& x, const EnvParams& d, const CameraConfig& cam, const RunwayProfile& profile) {
    const RawFrame raw = render_raw(x, d, cam, profile);
    return apply_lighting(raw.image, d, raw.light_coverage);
}

Observation mirror(const Observation& obs) {
    Observation out = obs;
    for (int row = 0; row < obs.height; ++row) {
        const std::size_t base = static_cast<std::size_t>(row) * obs.width;
        std::reverse_copy(obs.pixels.begin() + static_cast<std::ptrdiff_t>(base),
                          obs.pixels.begin() + static_cast<std::ptrdiff_t>(base + obs.width),
                          out.pixels.begin() + static_cast<std::ptrdiff_t>(base));
    }
    // The flipped frame is not generally the view from any pose.
    out.state.reset();
    return out;
}

}  // namespace reachguard
