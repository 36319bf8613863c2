#pragma once

#include <filesystem>
#include <string>
#include <string_view>

namespace reachguard {

// Lower-case hex SHA-256.
std::string sha256_hex(std::string_view bytes);
std::string sha256_file(const std::filesystem::path& path);

// UTC ISO-8601; honours SOURCE_DATE_EPOCH so reruns can be byte-identical.
std::string build_timestamp();

}  // namespace reachguard
