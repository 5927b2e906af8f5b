#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "telme/config.hpp"

namespace telme {

/// One grid cell. `subset` names the modalities feeding the prediction
/// relative to the teacher: "T", "A", "V", "T+A", "T+V" or "T+A+V" for a text
/// teacher; with another teacher "T" means that teacher and "T+A+V" all three.
/// Single non-verbal subsets score the (possibly distilled) student alone,
/// combinations fuse through ASF or, with asf off, concatenation.
struct CellSpec {
  std::string table;  // grouping label, one CSV per table
  std::string name;
  Modality teacher = Modality::Text;
  std::string subset = "T+A+V";
  bool asf = true;
  bool response = true;
  bool feature = true;

  std::string key() const;
};

struct GridSpec {
  std::vector<CellSpec> cells;
  std::vector<std::uint64_t> seeds;
};

/// "table3" (toggle rows), "table4" (modality subsets), "teacher" (teacher swap).
std::vector<CellSpec> preset_cells(const std::string& preset);

/// {"presets": [...], "cells": [{table,name,teacher,subset,asf,response,feature}], "seeds": [...]}
GridSpec parse_grid_spec(const nlohmann::json& j);
GridSpec load_grid_spec(const std::filesystem::path& path);
GridSpec default_grid_spec();

struct CellResult {
  CellSpec cell;
  std::uint64_t seed = 0;
  double weighted_f1 = 0.0;  // test split
  // Test F1 of each unimodal encoder the cell uses (teacher or student).
  std::optional<double> text_f1, audio_f1, visual_f1;
};

struct AblationGrid {
  std::vector<CellResult> rows;  // cell-major, seeds in spec order

  std::vector<double> cell_values(const std::string& key) const;
  double cell_mean(const std::string& key) const;
};

/// Trains every cell for every seed. Seeds run in parallel over `threads`
/// workers; each seed is self-contained so results do not depend on it.
AblationGrid run_ablation(const GridSpec& spec, const RunConfig& base, std::size_t threads = 1);

struct TrendCheck {
  std::string name;
  std::string detail;
  double margin = 0.0;
  bool holds = false;
};

/// Direction checks for whichever groups the grid contains. Reported only;
/// never an error.
std::vector<TrendCheck> trend_checks(const AblationGrid& grid);

/// Writes ablation_<table>.csv per table (per-seed rows, blank line, summary
/// block) plus trends.csv. Returns the written file names.
std::vector<std::string> write_ablation(const AblationGrid& grid, const std::filesystem::path& dir);

}  // namespace telme
