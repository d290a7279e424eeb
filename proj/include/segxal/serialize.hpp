#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "segxal/types.hpp"

namespace segxal {

inline constexpr std::string_view kSchemaVersion = "segxal/1";

using Bytes = std::vector<std::uint8_t>;

Bytes serialize_pool(const SamplePool& pool);
/// Throws CorruptInputError with the failing byte offset on malformed data.
SamplePool deserialize_pool(const Bytes& bytes);

nlohmann::json pool_to_json(const SamplePool& pool);
SamplePool pool_from_json(const nlohmann::json& j);

nlohmann::json to_json(const ALConfig& cfg);
/// Missing keys keep their defaults; unknown keys are ignored.
ALConfig al_config_from_json(const nlohmann::json& j, ALConfig base = {});

/// Writes via a temporary file and rename so readers never observe partial documents.
void write_file_atomic(const std::string& path, std::string_view contents);
std::string read_file(const std::string& path);

}  // namespace segxal
