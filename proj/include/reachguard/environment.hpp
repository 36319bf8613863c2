#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace reachguard {

enum class TimeOfDay : std::uint8_t { morning = 0, evening = 1, night = 2 };
enum class Cloud : std::uint8_t { clear = 0, overcast = 1 };

struct EnvParams {
    TimeOfDay d1 = TimeOfDay::morning;
    Cloud d2 = Cloud::clear;
    std::uint8_t runway_id = 0;

    friend bool operator==(const EnvParams&, const EnvParams&) = default;
};

std::string to_string(TimeOfDay d);
std::string to_string(Cloud d);
std::string to_string(const EnvParams& env);

TimeOfDay parse_time_of_day(const std::string& s);
Cloud parse_cloud(const std::string& s);

// All six (d1, d2) combinations for one runway, morning/clear first.
std::vector<EnvParams> all_conditions(std::uint8_t runway_id);

// Index of (d1, d2) in [0, 6).
inline int condition_index(const EnvParams& env) {
    return static_cast<int>(env.d1) * 2 + static_cast<int>(env.d2);
}

}  // namespace reachguard
