#pragma once

#include <array>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <vector>

#include "reachguard/mlp.hpp"

namespace reachguard {

constexpr std::uint8_t kModelKindNrt = 1;
constexpr std::uint8_t kEnvEncodingVersion = 1;

// Trailing block of value-network checkpoints.
struct NrtMetadata {
    std::array<double, 3> lo{};
    std::array<double, 3> hi{};
    double horizon = 0.0;
    double omega0 = 0.0;
    std::uint8_t env_encoding_version = kEnvEncodingVersion;
};

struct Checkpoint {
    std::vector<LayerShape> layers;
    std::vector<double> params;
    std::optional<NrtMetadata> nrt;
};

// VFMW: "VFMW", u32 version=1, u32 n_layers, per layer (u32 in, u32 out),
// f32 parameters in declaration order; value networks append
// u8 kind=1, 3 x (f64 lo, f64 hi), f64 horizon, f64 omega0, u8 encoding.
void write_checkpoint(std::ostream& out, const Checkpoint& ckpt);
Checkpoint read_checkpoint(std::istream& in);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

Checkpoint to_checkpoint(const Mlp& net);
Mlp to_mlp(const Checkpoint& ckpt, Activation activation, double omega0 = 1.0);

}  // namespace reachguard
