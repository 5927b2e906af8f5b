#include "telme/ablation.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <thread>

#include "telme/checkpoint.hpp"
#include "telme/error.hpp"

namespace telme {

namespace fs = std::filesystem;
using nlohmann::json;

std::string CellSpec::key() const {
  return table + "/" + name;
}

std::vector<CellSpec> preset_cells(const std::string& preset) {
  std::vector<CellSpec> out;
  if (preset == "table3") {
    out.push_back({"table3", "concat_ce", Modality::Text, "T+A+V", false, false, false});
    out.push_back({"table3", "asf_ce", Modality::Text, "T+A+V", true, false, false});
    out.push_back({"table3", "asf_response", Modality::Text, "T+A+V", true, true, false});
    out.push_back({"table3", "asf_response_feature", Modality::Text, "T+A+V", true, true, true});
  } else if (preset == "table4") {
    for (const char* s : {"T", "A", "V", "T+A", "T+V", "T+A+V"}) out.push_back({"table4", s, Modality::Text, s, true, true, true});
  } else if (preset == "teacher") {
    for (Modality m : kAllModalities) out.push_back({"teacher", to_string(m), m, "T+A+V", true, true, true});
  } else {
    fail(ErrorKind::Configuration, "unknown ablation preset '" + preset + "' (expected table3, table4, teacher)");
  }
  return out;
}

namespace {

CellSpec parse_cell(const json& j, std::size_t index) {
  const std::string where = "grid spec cells[" + std::to_string(index) + "]";
  if (!j.is_object()) fail(ErrorKind::Parse, where + " must be an object");
  static const std::set<std::string> known = {"table", "name", "teacher", "subset", "asf", "response", "feature"};
  for (const auto& [k, v] : j.items())
    if (!known.count(k)) fail(ErrorKind::Parse, where + ": unknown key " + k);
  CellSpec c;
  c.table = "custom";
  try {
    c.table = j.value("table", c.table);
    c.name = j.at("name").get<std::string>();
    c.teacher = parse_modality(j.value("teacher", std::string("text")));
    c.subset = j.value("subset", c.subset);
    c.asf = j.value("asf", c.asf);
    c.response = j.value("response", c.response);
    c.feature = j.value("feature", c.feature);
  } catch (const json::exception& e) {
    fail(ErrorKind::Parse, where + ": " + e.what());
  }
  return c;
}

// Slots named by a subset string: T = teacher, A/V = first/second student.
struct Slots {
  bool teacher = false;
  std::vector<std::size_t> students;  // indices into student_modalities(teacher)
};

Slots parse_subset(const std::string& subset) {
  Slots s;
  std::size_t start = 0;
  while (start <= subset.size()) {
    const auto plus = subset.find('+', start);
    const std::string part = subset.substr(start, plus == std::string::npos ? std::string::npos : plus - start);
    if (part == "T" && !s.teacher) s.teacher = true;
    else if (part == "A" && std::find(s.students.begin(), s.students.end(), 0) == s.students.end()) s.students.push_back(0);
    else if (part == "V" && std::find(s.students.begin(), s.students.end(), 1) == s.students.end()) s.students.push_back(1);
    else fail(ErrorKind::Configuration, "invalid modality subset '" + subset + "'");
    if (plus == std::string::npos) break;
    start = plus + 1;
  }
  std::sort(s.students.begin(), s.students.end());
  if (!s.teacher && s.students.size() != 1)
    fail(ErrorKind::Configuration, "subset '" + subset + "': combinations must include the teacher T");
  return s;
}

// Lazily trains and memoizes everything one seed needs.
class SeedRunner {
 public:
  SeedRunner(const RunConfig& base, std::uint64_t seed) : config_(base) {
    config_.seed = seed;
    data_ = generate(config_.generator());
  }

  CellResult run(const CellSpec& cell) {
    const Slots slots = parse_subset(cell.subset);
    TrainConfig t = config_.training();
    t.teacher = cell.teacher;
    if (!cell.response) t.kd.alpha = 0.0;
    if (!cell.feature) t.kd.beta = 0.0;

    CellResult r;
    r.cell = cell;
    r.seed = config_.seed;
    const TrainedModel& teacher = teacher_for(t);
    const std::vector<Modality> student_mods = student_modalities(cell.teacher);
    if (slots.teacher) {
      record(r, teacher.model);
    }
    std::vector<const ModalityModel*> fused_students;
    if (!slots.students.empty()) {
      const StudentSet& students = students_for(t, teacher.model);
      for (std::size_t i : slots.students) {
        const ModalityModel* m = &students.get(student_mods[i]).model;
        fused_students.push_back(m);
        record(r, *m);
      }
    }
    if (slots.teacher && fused_students.empty()) {
      r.weighted_f1 = f1(teacher.model);
    } else if (!slots.teacher) {
      r.weighted_f1 = f1(*fused_students.front());
    } else {
      const FusionKind kind = cell.asf ? FusionKind::Asf : FusionKind::Concat;
      std::string key = kd_key(t) + ":" + to_string(kind);
      for (std::size_t i : slots.students) key += ":" + std::to_string(i);
      auto it = fused_f1_.find(key);
      if (it == fused_f1_.end()) {
        const auto fused = train_fusion(data_, &teacher.model, fused_students, kind, t);
        const double v = split_f1(predict(fused.model, teacher.model, fused_students, data_.test), data_.num_classes);
        it = fused_f1_.emplace(key, v).first;
      }
      r.weighted_f1 = it->second;
    }
    return r;
  }

 private:
  static std::string kd_key(const TrainConfig& t) {
    char buf[96];
    std::snprintf(buf, sizeof buf, "%s:%.17g:%.17g", to_string(t.teacher), t.kd.alpha, t.kd.beta);
    return buf;
  }

  const TrainedModel& teacher_for(const TrainConfig& t) {
    const std::string key = to_string(t.teacher);
    auto it = teachers_.find(key);
    if (it == teachers_.end()) it = teachers_.emplace(key, train_teacher(data_, t)).first;
    return it->second;
  }

  const StudentSet& students_for(const TrainConfig& t, const ModalityModel& teacher) {
    const std::string key = kd_key(t);
    auto it = students_.find(key);
    if (it == students_.end()) it = students_.emplace(key, distill_students(data_, &teacher, t)).first;
    return it->second;
  }

  double f1(const ModalityModel& m) { return split_f1(predict(m, data_.test), data_.num_classes); }

  void record(CellResult& r, const ModalityModel& m) {
    const double v = f1(m);
    switch (m.encoder.modality) {
      case Modality::Text: r.text_f1 = v; break;
      case Modality::Audio: r.audio_f1 = v; break;
      case Modality::Visual: r.visual_f1 = v; break;
    }
  }

  RunConfig config_;
  DatasetSplit data_;
  std::map<std::string, TrainedModel> teachers_;
  std::map<std::string, StudentSet> students_;
  std::map<std::string, double> fused_f1_;
};

double mean_of(const std::vector<double>& v) {
  return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double stddev_of(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = mean_of(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size() - 1));
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

std::string fmt(const std::optional<double>& v) { return v ? fmt(*v) : std::string(); }

std::string cell_columns(const CellSpec& c) {
  return c.table + "," + c.name + "," + to_string(c.teacher) + "," + c.subset + "," + (c.asf ? "1" : "0") + "," +
         (c.response ? "1" : "0") + "," + (c.feature ? "1" : "0");
}

const CellResult* find_row(const AblationGrid& g, const std::string& key, std::uint64_t seed) {
  for (const auto& r : g.rows)
    if (r.cell.key() == key && r.seed == seed) return &r;
  return nullptr;
}

bool has_cell(const AblationGrid& g, const std::string& key) {
  return std::any_of(g.rows.begin(), g.rows.end(), [&](const CellResult& r) { return r.cell.key() == key; });
}

std::vector<double> column(const AblationGrid& g, const std::string& key, std::optional<double> CellResult::*field) {
  std::vector<double> out;
  for (const auto& r : g.rows)
    if (r.cell.key() == key && (r.*field)) out.push_back(*(r.*field));
  return out;
}

}  // namespace

GridSpec parse_grid_spec(const json& j) {
  if (!j.is_object()) fail(ErrorKind::Parse, "grid spec must be an object");
  for (const auto& [k, v] : j.items())
    if (k != "presets" && k != "cells" && k != "seeds") fail(ErrorKind::Parse, "grid spec: unknown key " + k);
  GridSpec spec;
  try {
    for (const auto& p : j.value("presets", json::array())) {
      auto cells = preset_cells(p.get<std::string>());
      spec.cells.insert(spec.cells.end(), cells.begin(), cells.end());
    }
    const json cells = j.value("cells", json::array());
    for (std::size_t i = 0; i < cells.size(); ++i) spec.cells.push_back(parse_cell(cells[i], i));
    spec.seeds = j.value("seeds", std::vector<std::uint64_t>{1, 2, 3, 4, 5});
  } catch (const json::exception& e) {
    fail(ErrorKind::Parse, std::string("grid spec: ") + e.what());
  }
  if (spec.cells.empty()) fail(ErrorKind::Configuration, "grid spec has no cells");
  if (spec.seeds.empty()) fail(ErrorKind::Configuration, "grid spec needs at least one seed");
  std::set<std::string> keys;
  for (const auto& c : spec.cells) {
    if (!keys.insert(c.key()).second) fail(ErrorKind::Configuration, "duplicate grid cell " + c.key());
    parse_subset(c.subset);
  }
  return spec;
}

GridSpec load_grid_spec(const fs::path& path) { return parse_grid_spec(read_json_file(path)); }

GridSpec default_grid_spec() {
  return parse_grid_spec({{"presets", {"table3", "table4", "teacher"}}, {"seeds", {1, 2, 3, 4, 5}}});
}

std::vector<double> AblationGrid::cell_values(const std::string& key) const {
  std::vector<double> out;
  for (const auto& r : rows)
    if (r.cell.key() == key) out.push_back(r.weighted_f1);
  return out;
}

double AblationGrid::cell_mean(const std::string& key) const { return mean_of(cell_values(key)); }

AblationGrid run_ablation(const GridSpec& spec, const RunConfig& base, std::size_t threads) {
  base.validate();
  std::vector<std::vector<CellResult>> per_seed(spec.seeds.size());
  std::atomic<std::size_t> next{0};
  std::vector<std::string> errors(spec.seeds.size());
  std::vector<ErrorKind> kinds(spec.seeds.size(), ErrorKind::CheckFailure);
  auto worker = [&] {
    for (std::size_t i = next++; i < spec.seeds.size(); i = next++) {
      try {
        SeedRunner runner(base, spec.seeds[i]);
        for (const auto& cell : spec.cells) per_seed[i].push_back(runner.run(cell));
      } catch (const Error& e) {
        errors[i] = e.what();
        kinds[i] = e.kind();
      }
    }
  };
  const std::size_t n = std::clamp<std::size_t>(threads, 1, spec.seeds.size());
  if (n == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < n; ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  for (std::size_t i = 0; i < errors.size(); ++i)
    if (!errors[i].empty()) fail(kinds[i], errors[i]);

  AblationGrid grid;
  for (std::size_t c = 0; c < spec.cells.size(); ++c)
    for (std::size_t s = 0; s < spec.seeds.size(); ++s) grid.rows.push_back(per_seed[s][c]);
  return grid;
}

std::vector<TrendCheck> trend_checks(const AblationGrid& grid) {
  std::vector<TrendCheck> out;
  auto compare = [&](const std::string& name, const std::string& better, const std::string& worse) {
    if (!has_cell(grid, better) || !has_cell(grid, worse)) return;
    const double a = grid.cell_mean(better), b = grid.cell_mean(worse);
    out.push_back({name, better + " vs " + worse, a - b, a >= b});
  };
  compare("table3_asf_over_concat", "table3/asf_ce", "table3/concat_ce");
  compare("table3_response_over_ce", "table3/asf_response", "table3/asf_ce");
  compare("table3_feature_over_response", "table3/asf_response_feature", "table3/asf_response");
  compare("table3_full_over_baseline", "table3/asf_response_feature", "table3/concat_ce");

  // Student F1 with both distillation losses against cross-entropy only.
  for (auto [field, label] : {std::pair{&CellResult::audio_f1, "audio"}, std::pair{&CellResult::visual_f1, "visual"}}) {
    const auto kd = column(grid, "table3/asf_response_feature", field);
    const auto ce = column(grid, "table3/asf_ce", field);
    if (kd.empty() || ce.empty()) continue;
    const double m = mean_of(kd) - mean_of(ce);
    out.push_back({std::string("kd_student_") + label, "mean student test F1, CE+response+feature vs CE", m, m > 0.0});
  }

  if (has_cell(grid, "table4/T+A+V") && has_cell(grid, "table4/T")) {
    std::size_t wins = 0, total = 0;
    for (const auto& r : grid.rows) {
      if (r.cell.key() != "table4/T+A+V") continue;
      const CellResult* t = find_row(grid, "table4/T", r.seed);
      if (!t) continue;
      ++total;
      wins += r.weighted_f1 >= t->weighted_f1;
    }
    const double margin = grid.cell_mean("table4/T+A+V") - grid.cell_mean("table4/T");
    out.push_back({"table4_fusion_over_text", "seeds with fused >= teacher: " + std::to_string(wins) + "/" +
                                                  std::to_string(total),
                   margin, 5 * wins >= 4 * total});
  }

  if (has_cell(grid, "teacher/text") && has_cell(grid, "teacher/audio") && has_cell(grid, "teacher/visual")) {
    const double text = grid.cell_mean("teacher/text");
    const double other = std::max(grid.cell_mean("teacher/audio"), grid.cell_mean("teacher/visual"));
    out.push_back({"teacher_text_best", "text teacher mean vs best other teacher", text - other, text > other});
  }
  return out;
}

std::vector<std::string> write_ablation(const AblationGrid& grid, const fs::path& dir) {
  fs::create_directories(dir);
  std::vector<std::string> tables;
  for (const auto& r : grid.rows)
    if (std::find(tables.begin(), tables.end(), r.cell.table) == tables.end()) tables.push_back(r.cell.table);

  std::vector<std::string> files;
  const char* cell_header = "table,cell,teacher,subset,asf,l_response,l_feature";
  for (const auto& table : tables) {
    const std::string name = "ablation_" + table + ".csv";
    std::ofstream os(dir / name, std::ios::binary);
    if (!os) fail(ErrorKind::Configuration, "cannot write " + (dir / name).string());
    os << cell_header << ",seed,weighted_f1,text_f1,audio_f1,visual_f1\n";
    std::vector<std::string> keys;
    for (const auto& r : grid.rows) {
      if (r.cell.table != table) continue;
      if (std::find(keys.begin(), keys.end(), r.cell.key()) == keys.end()) keys.push_back(r.cell.key());
      os << cell_columns(r.cell) << ',' << r.seed << ',' << fmt(r.weighted_f1) << ',' << fmt(r.text_f1) << ','
         << fmt(r.audio_f1) << ',' << fmt(r.visual_f1) << '\n';
    }
    os << '\n' << cell_header << ",n,mean_weighted_f1,std_weighted_f1,mean_text_f1,mean_audio_f1,mean_visual_f1\n";
    for (const auto& key : keys) {
      const auto it = std::find_if(grid.rows.begin(), grid.rows.end(), [&](const CellResult& r) { return r.cell.key() == key; });
      const auto values = grid.cell_values(key);
      auto mean_col = [&](std::optional<double> CellResult::*field) {
        const auto v = column(grid, key, field);
        return v.empty() ? std::string() : fmt(mean_of(v));
      };
      os << cell_columns(it->cell) << ',' << values.size() << ',' << fmt(mean_of(values)) << ','
         << fmt(stddev_of(values)) << ',' << mean_col(&CellResult::text_f1) << ',' << mean_col(&CellResult::audio_f1)
         << ',' << mean_col(&CellResult::visual_f1) << '\n';
    }
    files.push_back(name);
  }

  std::ofstream os(dir / "trends.csv", std::ios::binary);
  os << "check,holds,margin,detail\n";
  for (const auto& t : trend_checks(grid))
    os << t.name << ',' << (t.holds ? "yes" : "no") << ',' << fmt(t.margin) << ",\"" << t.detail << "\"\n";
  files.push_back("trends.csv");
  return files;
}

}  // namespace telme
