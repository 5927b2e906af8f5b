#pragma once

// Checkpoint file layout (UTF-8 JSON, one object):
//   {
//     "format":  "telme-checkpoint",
//     "version": 1,
//     "kind":    "modality_model" | "fusion",
//     "seed":    <uint64>,
//     "meta":    { kind-specific scalars: modality, heads, theta, ... },
//     "tensors": [ {"name": str, "rows": n, "cols": m, "data": [n*m doubles, row-major]}, ... ]
//   }
// Doubles are written in shortest round-trip form, so a save/load cycle is
// bit-exact. Tensor order follows each model's for_each_tensor order.

#include <cstdint>
#include <filesystem>
#include <string>

#include <json.hpp>

#include "telme/numerics.hpp"

namespace telme {

inline constexpr int kCheckpointVersion = 1;

struct CheckpointHeader {
  std::string kind;
  std::uint64_t seed = 0;
  nlohmann::json meta = nlohmann::json::object();
};

nlohmann::json tensors_to_json(const std::vector<std::pair<std::string, const Matrix*>>& tensors);
/// Fills `tensors` in order, checking names and shapes.
void tensors_from_json(const nlohmann::json& j, const std::vector<std::pair<std::string, Matrix*>>& tensors,
                       const std::string& source);

void write_json_file(const std::filesystem::path& path, const nlohmann::json& j);
nlohmann::json read_json_file(const std::filesystem::path& path);

template <class T>
void save_checkpoint(const std::filesystem::path& path, const CheckpointHeader& header, const T& model) {
  std::vector<std::pair<std::string, const Matrix*>> tensors;
  model.for_each_tensor([&](const char* name, const Matrix& m) { tensors.emplace_back(name, &m); });
  nlohmann::json j = {{"format", "telme-checkpoint"},
                      {"version", kCheckpointVersion},
                      {"kind", header.kind},
                      {"seed", header.seed},
                      {"meta", header.meta},
                      {"tensors", tensors_to_json(tensors)}};
  write_json_file(path, j);
}

/// Reads the header; throws Dependency if the file is missing and Schema on a
/// format/version mismatch.
CheckpointHeader read_checkpoint_header(const nlohmann::json& j, const std::filesystem::path& path);

template <class T>
void load_checkpoint_tensors(const nlohmann::json& j, const std::filesystem::path& path, T& model) {
  std::vector<std::pair<std::string, Matrix*>> tensors;
  model.for_each_tensor([&](const char* name, Matrix& m) { tensors.emplace_back(name, &m); });
  tensors_from_json(j.at("tensors"), tensors, path.string());
}

}  // namespace telme
