#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace vulnroute {

using Json = nlohmann::json;

std::string read_text_file(const std::filesystem::path& path);

// Writes via a temporary sibling and rename, so readers never observe a
// partially written file.
void write_text_file_atomic(const std::filesystem::path& path, std::string_view content);

Json read_json_file(const std::filesystem::path& path);
void write_json_file(const std::filesystem::path& path, const Json& doc);

// Filesystem-safe rendering of an identifier.
std::string sanitize_filename(std::string_view id);

}  // namespace vulnroute
