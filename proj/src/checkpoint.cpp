#include "telme/checkpoint.hpp"

#include <fstream>
#include <sstream>

#include "telme/error.hpp"

namespace telme {

using nlohmann::json;

json tensors_to_json(const std::vector<std::pair<std::string, const Matrix*>>& tensors) {
  json arr = json::array();
  for (const auto& [name, m] : tensors) {
    arr.push_back({{"name", name},
                   {"rows", m->rows()},
                   {"cols", m->cols()},
                   {"data", std::vector<double>(m->flat().begin(), m->flat().end())}});
  }
  return arr;
}

void tensors_from_json(const json& j, const std::vector<std::pair<std::string, Matrix*>>& tensors,
                       const std::string& source) {
  if (!j.is_array() || j.size() != tensors.size())
    fail(ErrorKind::Schema, source + ": expected " + std::to_string(tensors.size()) + " tensors");
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    const auto& t = j[i];
    const auto& [name, dst] = tensors[i];
    try {
      if (t.at("name").get<std::string>() != name)
        fail(ErrorKind::Schema, source + ": tensor " + std::to_string(i) + " is '" +
                                    t.at("name").get<std::string>() + "', expected '" + name + "'");
      const auto rows = t.at("rows").get<std::size_t>();
      const auto cols = t.at("cols").get<std::size_t>();
      if (!dst->empty() && (rows != dst->rows() || cols != dst->cols()))
        fail(ErrorKind::Schema, source + ": tensor '" + name + "' has shape " + std::to_string(rows) + "x" +
                                    std::to_string(cols) + ", expected " + dst->shape_string());
      *dst = Matrix(rows, cols, t.at("data").get<std::vector<double>>());
    } catch (const json::exception& e) {
      fail(ErrorKind::Schema, source + ": malformed tensor entry: " + e.what());
    }
  }
}

void write_json_file(const std::filesystem::path& path, const json& j) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary);
  if (!os) fail(ErrorKind::Configuration, "cannot write " + path.string());
  os << j.dump(1) << '\n';
  if (!os) fail(ErrorKind::Configuration, "failed writing " + path.string());
}

json read_json_file(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) fail(ErrorKind::Dependency, "missing file: " + path.string());
  std::stringstream ss;
  ss << is.rdbuf();
  try {
    return json::parse(ss.str());
  } catch (const json::parse_error& e) {
    fail(ErrorKind::Parse, path.string() + ": " + e.what());
  }
}

CheckpointHeader read_checkpoint_header(const json& j, const std::filesystem::path& path) {
  try {
    if (j.at("format").get<std::string>() != "telme-checkpoint")
      fail(ErrorKind::Schema, path.string() + ": not a telme checkpoint");
    if (j.at("version").get<int>() != kCheckpointVersion)
      fail(ErrorKind::Schema, path.string() + ": unsupported checkpoint version");
    return CheckpointHeader{j.at("kind").get<std::string>(), j.at("seed").get<std::uint64_t>(), j.at("meta")};
  } catch (const json::exception& e) {
    fail(ErrorKind::Schema, path.string() + ": malformed checkpoint header: " + e.what());
  }
}

}  // namespace telme
