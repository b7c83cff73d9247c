#pragma once

#include <filesystem>

#include <nlohmann/json.hpp>

namespace lsme {

// Throws DataIntegrityError when the file is missing or not valid JSON.
nlohmann::json ReadJsonFile(const std::filesystem::path& path);

// Creates parent directories. indent < 0 writes compact JSON. Output ends with
// a newline.
void WriteJsonFile(const std::filesystem::path& path, const nlohmann::json& j,
                   int indent = 2);

void WriteTextFile(const std::filesystem::path& path, const std::string& text);

}  // namespace lsme
