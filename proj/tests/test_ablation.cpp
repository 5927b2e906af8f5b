#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "telme/ablation.hpp"
#include "telme/error.hpp"

using namespace telme;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

RunConfig tiny_base() {
  RunConfig c;
  c.data.train_dialogues = 20;
  c.data.dev_dialogues = 5;
  c.data.test_dialogues = 6;
  c.train.embed_dim = 8;
  c.train.batch_size = 16;
  c.train.teacher_epochs = 2;
  c.train.student_epochs = 2;
  c.train.fusion_epochs = 2;
  c.train.fusion.heads = 2;
  return c;
}

const AblationGrid& tiny_grid() {
  static const AblationGrid grid = [] {
    GridSpec spec = parse_grid_spec({{"presets", {"table3", "table4", "teacher"}}, {"seeds", {3, 4}}});
    return run_ablation(spec, tiny_base(), 1);
  }();
  return grid;
}

ErrorKind kind_of(const json& j) {
  try {
    parse_grid_spec(j);
  } catch (const Error& e) {
    return e.kind();
  }
  return ErrorKind::CheckFailure;
}

std::vector<std::string> lines_of(const fs::path& p) {
  std::ifstream is(p);
  std::vector<std::string> out;
  for (std::string l; std::getline(is, l);) out.push_back(l);
  return out;
}

}  // namespace

TEST(Ablation, PresetStructure) {
  const auto t3 = preset_cells("table3");
  ASSERT_EQ(t3.size(), 4u);
  EXPECT_FALSE(t3[0].asf);
  EXPECT_FALSE(t3[0].response || t3[0].feature);
  EXPECT_TRUE(t3[1].asf && !t3[1].response && !t3[1].feature);
  EXPECT_TRUE(t3[2].asf && t3[2].response && !t3[2].feature);
  EXPECT_TRUE(t3[3].asf && t3[3].response && t3[3].feature);

  const auto t4 = preset_cells("table4");
  ASSERT_EQ(t4.size(), 6u);
  std::vector<std::string> subsets;
  for (const auto& c : t4) subsets.push_back(c.subset);
  EXPECT_EQ(subsets, (std::vector<std::string>{"T", "A", "V", "T+A", "T+V", "T+A+V"}));

  const auto teachers = preset_cells("teacher");
  ASSERT_EQ(teachers.size(), 3u);
  EXPECT_EQ(teachers[0].teacher, Modality::Text);
  EXPECT_EQ(teachers[1].teacher, Modality::Audio);
  EXPECT_EQ(teachers[2].teacher, Modality::Visual);
}

TEST(Ablation, GridSpecParsing) {
  const GridSpec d = default_grid_spec();
  EXPECT_EQ(d.cells.size(), 13u);
  EXPECT_EQ(d.seeds, (std::vector<std::uint64_t>{1, 2, 3, 4, 5}));
  const GridSpec custom = parse_grid_spec(json::parse(
      R"({"cells": [{"table": "mine", "name": "ta", "subset": "T+A", "response": false}], "seeds": [7]})"));
  ASSERT_EQ(custom.cells.size(), 1u);
  EXPECT_EQ(custom.cells[0].key(), "mine/ta");
  EXPECT_FALSE(custom.cells[0].response);
  EXPECT_TRUE(custom.cells[0].feature);
}

TEST(Ablation, GridSpecErrors) {
  EXPECT_EQ(kind_of(json::parse(R"({"presetz": ["table3"]})")), ErrorKind::Parse);
  EXPECT_EQ(kind_of(json::parse(R"({"presets": ["table9"]})")), ErrorKind::Configuration);
  EXPECT_EQ(kind_of(json::parse(R"({"presets": ["table3", "table3"]})")), ErrorKind::Configuration);
  EXPECT_EQ(kind_of(json::parse(R"({"presets": ["table3"], "seeds": []})")), ErrorKind::Configuration);
  EXPECT_EQ(kind_of(json::parse(R"({"cells": [{"name": "x", "subset": "A+V"}]})")), ErrorKind::Configuration);
  EXPECT_EQ(kind_of(json::parse(R"({"cells": [{"name": "x", "colour": 1}]})")), ErrorKind::Parse);
}

TEST(Ablation, OneMetricPerCellPerSeed) {
  const AblationGrid& g = tiny_grid();
  EXPECT_EQ(g.rows.size(), 13u * 2u);
  for (const auto& r : g.rows) {
    EXPECT_GE(r.weighted_f1, 0.0);
    EXPECT_LE(r.weighted_f1, 1.0);
  }
  EXPECT_EQ(g.cell_values("table3/concat_ce").size(), 2u);
}

TEST(Ablation, SharedConfigurationsAgreeAcrossTables) {
  // The full text-teacher pipeline appears in three tables; caching must not
  // change its numbers.
  const AblationGrid& g = tiny_grid();
  EXPECT_EQ(g.cell_values("table3/asf_response_feature"), g.cell_values("table4/T+A+V"));
  EXPECT_EQ(g.cell_values("table4/T+A+V"), g.cell_values("teacher/text"));
}

TEST(Ablation, UnimodalCellsReportTheirEncoder) {
  for (const auto& r : tiny_grid().rows) {
    if (r.cell.key() == "table4/T") {
      ASSERT_TRUE(r.text_f1.has_value());
      EXPECT_DOUBLE_EQ(r.weighted_f1, *r.text_f1);
    }
    if (r.cell.key() == "table4/A") {
      ASSERT_TRUE(r.audio_f1.has_value());
      EXPECT_DOUBLE_EQ(r.weighted_f1, *r.audio_f1);
    }
  }
}

TEST(Ablation, ThreadCountDoesNotChangeResults) {
  GridSpec spec = parse_grid_spec({{"presets", {"table3"}}, {"seeds", {3, 4}}});
  const AblationGrid one = run_ablation(spec, tiny_base(), 1);
  const AblationGrid two = run_ablation(spec, tiny_base(), 2);
  ASSERT_EQ(one.rows.size(), two.rows.size());
  for (std::size_t i = 0; i < one.rows.size(); ++i) {
    EXPECT_EQ(one.rows[i].cell.key(), two.rows[i].cell.key());
    EXPECT_EQ(one.rows[i].seed, two.rows[i].seed);
    EXPECT_EQ(one.rows[i].weighted_f1, two.rows[i].weighted_f1);
  }
  EXPECT_EQ(one.cell_values("table3/asf_ce"), tiny_grid().cell_values("table3/asf_ce"));
}

TEST(Ablation, CsvLayout) {
  const fs::path dir = fs::temp_directory_path() / "telme_ablation_csv";
  fs::remove_all(dir);
  const auto files = write_ablation(tiny_grid(), dir);
  EXPECT_EQ(files, (std::vector<std::string>{"ablation_table3.csv", "ablation_table4.csv", "ablation_teacher.csv",
                                             "trends.csv"}));
  const auto t3 = lines_of(dir / "ablation_table3.csv");
  // header, 4 cells x 2 seeds, blank, summary header, 4 summary rows
  ASSERT_EQ(t3.size(), 1u + 8u + 1u + 1u + 4u);
  EXPECT_EQ(t3[0].rfind("table,cell,", 0), 0u);
  EXPECT_TRUE(t3[9].empty());
  EXPECT_NE(t3[10].find("mean_weighted_f1"), std::string::npos);
  const auto t4 = lines_of(dir / "ablation_table4.csv");
  EXPECT_EQ(t4.size(), 1u + 12u + 1u + 1u + 6u);
  const auto trends = lines_of(dir / "trends.csv");
  EXPECT_EQ(trends[0], "check,holds,margin,detail");
}

TEST(Ablation, TrendChecksCoverEveryGroup) {
  std::vector<std::string> names;
  for (const auto& t : trend_checks(tiny_grid())) names.push_back(t.name);
  for (const char* n : {"table3_asf_over_concat", "kd_student_audio", "kd_student_visual", "table4_fusion_over_text",
                        "teacher_text_best"})
    EXPECT_NE(std::find(names.begin(), names.end(), n), names.end()) << n;
}
