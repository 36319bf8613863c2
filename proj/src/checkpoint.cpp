#include "reachguard/checkpoint.hpp"

#include <fstream>

#include "reachguard/binary_io.hpp"

namespace reachguard {

namespace {
constexpr std::uint32_t kCheckpointVersion = 1;
}

void write_checkpoint(std::ostream& out, const Checkpoint& ckpt) {
    ByteWriter w(out);
    w.magic("VFMW");
    w.u32(kCheckpointVersion);
    w.u32(static_cast<std::uint32_t>(ckpt.layers.size()));
    std::size_t expected = 0;
    for (const auto& l : ckpt.layers) {
        w.u32(l.in);
        w.u32(l.out);
        expected += static_cast<std::size_t>(l.in) * l.out + l.out;
    }
    if (expected != ckpt.params.size()) {
        throw DimensionError("write_checkpoint: parameter count does not match architecture");
    }
    for (double p : ckpt.params) {
        w.f32(static_cast<float>(p));
    }
    if (ckpt.nrt) {
        const NrtMetadata& m = *ckpt.nrt;
        w.u8(kModelKindNrt);
        for (std::size_t i = 0; i < 3; ++i) {
            w.f64(m.lo[i]);
            w.f64(m.hi[i]);
        }
        w.f64(m.horizon);
        w.f64(m.omega0);
        w.u8(m.env_encoding_version);
    }
}

Checkpoint read_checkpoint(std::istream& in) {
    ByteReader r(in, "VFMW");
    r.expect_magic("VFMW");
    const std::uint32_t version = r.u32();
    if (version != kCheckpointVersion) {
        throw FormatError("VFMW: unsupported version " + std::to_string(version));
    }
    Checkpoint ckpt;
    const std::uint32_t n_layers = r.u32();
    std::size_t total = 0;
    for (std::uint32_t i = 0; i < n_layers; ++i) {
        LayerShape l;
        l.in = r.u32();
        l.out = r.u32();
        total += static_cast<std::size_t>(l.in) * l.out + l.out;
        ckpt.layers.push_back(l);
    }
    ckpt.params.resize(total);
    for (auto& p : ckpt.params) {
        p = r.f32();
    }
    if (!r.at_end()) {
        const std::uint8_t kind = r.u8();
        if (kind != kModelKindNrt) {
            throw FormatError("VFMW: unknown metadata kind " + std::to_string(kind));
        }
        NrtMetadata m;
        for (std::size_t i = 0; i < 3; ++i) {
            m.lo[i] = r.f64();
            m.hi[i] = r.f64();
        }
        m.horizon = r.f64();
        m.omega0 = r.f64();
        m.env_encoding_version = r.u8();
        ckpt.nrt = m;
    }
    return ckpt;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw ReachError("cannot write " + path.string());
    }
    write_checkpoint(out, ckpt);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw MissingPrerequisite("cannot read checkpoint " + path.string());
    }
    return read_checkpoint(in);
}

Checkpoint to_checkpoint(const Mlp& net) { return {net.layers(), net.params(), std::nullopt}; }

Mlp to_mlp(const Checkpoint& ckpt, Activation activation, double omega0) {
    Mlp net(ckpt.layers, activation, omega0);
    net.params() = ckpt.params;
    return net;
}

}  // namespace reachguard
