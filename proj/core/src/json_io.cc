#include "lsme/json_io.h"

#include <fstream>
#include <string>

#include "lsme/error.h"

namespace lsme {

nlohmann::json ReadJsonFile(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataIntegrityError("cannot open " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw DataIntegrityError("malformed JSON in " + path.string() + ": " +
                             e.what());
  }
}

void WriteTextFile(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) {
    std::filesystem::create_directories(path.parent_path());
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataIntegrityError("cannot write " + path.string());
  out << text;
  if (!out) throw DataIntegrityError("write failed for " + path.string());
}

void WriteJsonFile(const std::filesystem::path& path, const nlohmann::json& j,
                   int indent) {
  WriteTextFile(path, j.dump(indent) + "\n");
}

}  // namespace lsme
