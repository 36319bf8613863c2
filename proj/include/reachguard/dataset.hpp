#pragma once

#include <filesystem>
#include <iosfwd>
#include <vector>

#include "reachguard/sensor.hpp"

namespace reachguard {

// An observation with its safety label: 1 = can lead to failure, 0 = safe.
struct LabeledObservation {
    Observation obs;
    std::uint8_t label = 0;
};

struct Dataset {
    int width = 0;
    int height = 0;
    bool labeled = false;
    std::vector<LabeledObservation> records;

    std::vector<Observation> observations() const;
    std::size_t positives() const;
};

// VFMD: "VFMD", u32 version=1, u32 count, u16 width, u16 height, u8 channels=1,
// u8 label_present, then per record f32 pixels, f32 px, f32 py, f32 theta_rad,
// u8 d1, u8 d2, u8 runway_id, [u8 label]. Little-endian.
void write_dataset(std::ostream& out, const Dataset& ds);
Dataset read_dataset(std::istream& in);
void save_dataset(const std::filesystem::path& path, const Dataset& ds);
Dataset load_dataset(const std::filesystem::path& path);

Dataset make_dataset(std::vector<LabeledObservation> records, bool labeled);

}  // namespace reachguard
