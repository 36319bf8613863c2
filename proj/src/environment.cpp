#include "reachguard/environment.hpp"

#include "reachguard/common.hpp"

namespace reachguard {

std::string to_string(TimeOfDay d) {
    switch (d) {
        case TimeOfDay::morning:
            return "morning";
        case TimeOfDay::evening:
            return "evening";
        case TimeOfDay::night:
            return "night";
    }
    return "unknown";
}

std::string to_string(Cloud d) {
    return d == Cloud::clear ? "clear" : "overcast";
}

std::string to_string(const EnvParams& env) {
    return "rw" + std::to_string(env.runway_id) + "/" + to_string(env.d1) + "/" + to_string(env.d2);
}

TimeOfDay parse_time_of_day(const std::string& s) {
    if (s == "morning") {
        return TimeOfDay::morning;
    }
    if (s == "evening") {
        return TimeOfDay::evening;
    }
    if (s == "night") {
        return TimeOfDay::night;
    }
    throw ConfigError("unknown time of day '" + s + "'");
}

Cloud parse_cloud(const std::string& s) {
    if (s == "clear") {
        return Cloud::clear;
    }
    if (s == "overcast") {
        return Cloud::overcast;
    }
    throw ConfigError("unknown cloud condition '" + s + "'");
}

std::vector<EnvParams> all_conditions(std::uint8_t runway_id) {
    std::vector<EnvParams> out;
    for (auto d1 : {TimeOfDay::morning, TimeOfDay::evening, TimeOfDay::night}) {
        for (auto d2 : {Cloud::clear, Cloud::overcast}) {
            out.push_back({d1, d2, runway_id});
        }
    }
    return out;
}

}  // namespace reachguard
