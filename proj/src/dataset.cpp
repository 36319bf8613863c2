#include "reachguard/dataset.hpp"

#include <fstream>

#include "reachguard/binary_io.hpp"

namespace reachguard {

namespace {
constexpr std::uint32_t kDatasetVersion = 1;
}

std::vector<Observation> Dataset::observations() const {
    std::vector<Observation> out;
    out.reserve(records.size());
    for (const auto& r : records) {
        out.push_back(r.obs);
    }
    return out;
}

std::size_t Dataset::positives() const {
    std::size_t n = 0;
    for (const auto& r : records) {
        n += r.label;
    }
    return n;
}

Dataset make_dataset(std::vector<LabeledObservation> records, bool labeled) {
    Dataset ds;
    ds.labeled = labeled;
    if (!records.empty()) {
        ds.width = records.front().obs.width;
        ds.height = records.front().obs.height;
    }
    ds.records = std::move(records);
    return ds;
}

void write_dataset(std::ostream& out, const Dataset& ds) {
    ByteWriter w(out);
    w.magic("VFMD");
    w.u32(kDatasetVersion);
    w.u32(static_cast<std::uint32_t>(ds.records.size()));
    w.u16(static_cast<std::uint16_t>(ds.width));
    w.u16(static_cast<std::uint16_t>(ds.height));
    w.u8(1);
    w.u8(ds.labeled ? 1 : 0);
    const std::size_t n_pix = static_cast<std::size_t>(ds.width) * static_cast<std::size_t>(ds.height);
    for (const auto& r : ds.records) {
        if (r.obs.pixels.size() != n_pix) {
            throw DimensionError("write_dataset: record size does not match header");
        }
        for (float p : r.obs.pixels) {
            w.f32(p);
        }
        const State x = r.obs.state.value_or(State{});
        const EnvParams d = r.obs.env.value_or(EnvParams{});
        w.f32(static_cast<float>(x.px));
        w.f32(static_cast<float>(x.py));
        w.f32(static_cast<float>(x.theta));
        w.u8(static_cast<std::uint8_t>(d.d1));
        w.u8(static_cast<std::uint8_t>(d.d2));
        w.u8(d.runway_id);
        if (ds.labeled) {
            w.u8(r.label);
        }
    }
}

Dataset read_dataset(std::istream& in) {
    ByteReader r(in, "VFMD");
    r.expect_magic("VFMD");
    const std::uint32_t version = r.u32();
    if (version != kDatasetVersion) {
        throw FormatError("VFMD: unsupported version " + std::to_string(version));
    }
    const std::uint32_t count = r.u32();
    Dataset ds;
    ds.width = r.u16();
    ds.height = r.u16();
    if (r.u8() != 1) {
        throw FormatError("VFMD: only single-channel data supported");
    }
    ds.labeled = r.u8() != 0;
    const std::size_t n_pix = static_cast<std::size_t>(ds.width) * static_cast<std::size_t>(ds.height);
    ds.records.resize(count);
    for (auto& rec : ds.records) {
        rec.obs.width = ds.width;
        rec.obs.height = ds.height;
        rec.obs.pixels.resize(n_pix);
        for (auto& p : rec.obs.pixels) {
            p = r.f32();
        }
        State x;
        x.px = r.f32();
        x.py = r.f32();
        x.theta = r.f32();
        EnvParams d;
        const std::uint8_t d1 = r.u8();
        const std::uint8_t d2 = r.u8();
        if (d1 > 2 || d2 > 1) {
            throw FormatError("VFMD: environment code out of range");
        }
        d.d1 = static_cast<TimeOfDay>(d1);
        d.d2 = static_cast<Cloud>(d2);
        d.runway_id = r.u8();
        rec.obs.state = x;
        rec.obs.env = d;
        if (ds.labeled) {
            rec.label = r.u8();
            if (rec.label > 1) {
                throw FormatError("VFMD: label out of range");
            }
        }
    }
    return ds;
}

void save_dataset(const std::filesystem::path& path, const Dataset& ds) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw ReachError("cannot write " + path.string());
    }
    write_dataset(out, ds);
}

Dataset load_dataset(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw MissingPrerequisite("cannot read dataset " + path.string());
    }
    return read_dataset(in);
}

}  // namespace reachguard
