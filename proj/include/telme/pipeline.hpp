#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "telme/config.hpp"
#include "telme/metrics.hpp"
#include "telme/training.hpp"

namespace telme {

inline constexpr const char* kVersion = "0.1.0";

// File names inside the checkpoint directory.
std::filesystem::path teacher_checkpoint_path(const RunConfig& c);
std::filesystem::path student_checkpoint_path(const RunConfig& c, Modality m);
std::filesystem::path fusion_checkpoint_path(const RunConfig& c);

void save_modality_model(const std::filesystem::path& path, const ModalityModel& m, const RunConfig& c);
/// Throws Dependency naming `path` when the file is missing.
ModalityModel load_modality_model(const std::filesystem::path& path, std::string* config_hash = nullptr);

void save_fusion_model(const std::filesystem::path& path, const FusionModel& m, const RunConfig& c);
FusionModel load_fusion_model(const std::filesystem::path& path, std::string* config_hash = nullptr);

/// Written beside a command's outputs; contains no timestamps so reruns are
/// byte-identical.
void write_manifest(const std::filesystem::path& dir, const std::string& command, const RunConfig& c,
                    const std::vector<std::string>& outputs);

/// Loads the feature file named by the config, or throws Dependency.
DatasetSplit load_run_data(const RunConfig& c);

struct EvalArtifacts {
  EvalReport report;
  std::vector<std::string> files;
};

/// Evaluates a fused model on one split and writes report_<split>.json,
/// confusion_<split>.csv and shift_trace_<split>.csv into `dir`.
EvalArtifacts evaluate_fusion(const FusionModel& fusion, const ModalityModel& teacher,
                              const std::vector<const ModalityModel*>& students, const DatasetSplit& data,
                              SplitName split, const std::filesystem::path& dir);

/// One row per sample: index, label, prediction, lambda, ‖F_T‖, ‖H‖, ‖Z − F_T‖.
void write_shift_trace_csv(const Prediction& p, const std::filesystem::path& path);

/// Everything produced by one full pipeline run.
struct PipelineResult {
  TrainedModel teacher;
  StudentSet students;
  TrainedFusion fusion;
  EvalReport test_report;
};

/// gen → teacher → distill → fusion → evaluate entirely in memory, writing
/// the metrics CSVs and test report into `dir` when it is non-empty.
PipelineResult run_full_pipeline(const RunConfig& c, const std::filesystem::path& dir);

}  // namespace telme
