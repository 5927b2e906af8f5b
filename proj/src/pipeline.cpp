#include "telme/pipeline.hpp"

#include <cstdio>
#include <fstream>

#include "telme/checkpoint.hpp"
#include "telme/error.hpp"

namespace telme {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

json read_checkpoint(const fs::path& path, const char* kind, CheckpointHeader& header) {
  if (!fs::exists(path)) fail(ErrorKind::Dependency, std::string("missing ") + kind + " checkpoint: " + path.string());
  json j = read_json_file(path);
  header = read_checkpoint_header(j, path);
  if (header.kind != kind)
    fail(ErrorKind::Schema, path.string() + ": expected a " + kind + " checkpoint, found " + header.kind);
  return j;
}

template <class T>
T meta_value(const CheckpointHeader& h, const char* key, const fs::path& path) {
  try {
    return h.meta.at(key).get<T>();
  } catch (const json::exception&) {
    fail(ErrorKind::Schema, path.string() + ": checkpoint meta lacks a valid '" + key + "'");
  }
}

void ensure_parent(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
}

}  // namespace

fs::path teacher_checkpoint_path(const RunConfig& c) { return c.checkpoint_dir() / "teacher.json"; }

fs::path student_checkpoint_path(const RunConfig& c, Modality m) {
  return c.checkpoint_dir() / (std::string("student_") + to_string(m) + ".json");
}

fs::path fusion_checkpoint_path(const RunConfig& c) { return c.checkpoint_dir() / "fusion.json"; }

void save_modality_model(const fs::path& path, const ModalityModel& m, const RunConfig& c) {
  ensure_parent(path);
  CheckpointHeader h;
  h.kind = "modality_model";
  h.seed = c.seed;
  h.meta = {{"modality", to_string(m.encoder.modality)},
            {"input_dim", m.encoder.input_dim()},
            {"embed_dim", m.encoder.embed_dim()},
            {"num_classes", m.head.num_classes()},
            {"config_hash", config_hash(c)}};
  save_checkpoint(path, h, m);
}

ModalityModel load_modality_model(const fs::path& path, std::string* hash) {
  CheckpointHeader h;
  const json j = read_checkpoint(path, "modality_model", h);
  const Modality modality = parse_modality(meta_value<std::string>(h, "modality", path));
  const auto in = meta_value<std::size_t>(h, "input_dim", path);
  const auto d = meta_value<std::size_t>(h, "embed_dim", path);
  const auto classes = meta_value<std::size_t>(h, "num_classes", path);
  ModalityModel m{StubEncoder::zeros(modality, in, d), ClassifierHead::zeros(d, classes)};
  load_checkpoint_tensors(j, path, m);
  if (hash) *hash = meta_value<std::string>(h, "config_hash", path);
  return m;
}

void save_fusion_model(const fs::path& path, const FusionModel& m, const RunConfig& c) {
  ensure_parent(path);
  std::vector<std::string> students;
  for (Modality s : m.students) students.emplace_back(to_string(s));
  CheckpointHeader h;
  h.kind = "fusion";
  h.seed = c.seed;
  h.meta = {{"fusion_kind", to_string(m.kind)},
            {"teacher", to_string(m.teacher)},
            {"students", students},
            {"config_hash", config_hash(c)}};
  if (m.kind == FusionKind::Asf) {
    h.meta["embed_dim"] = m.asf.dim();
    h.meta["heads"] = m.asf.attn.heads;
    h.meta["theta"] = m.asf.theta;
    h.meta["dropout"] = m.asf.dropout;
    h.meta["num_classes"] = m.asf.classifier.num_classes();
  } else {
    h.meta["embed_dim"] = m.concat.input_dim() / (1 + m.students.size());
    h.meta["dropout"] = m.concat_dropout;
    h.meta["num_classes"] = m.concat.num_classes();
  }
  save_checkpoint(path, h, m);
}

FusionModel load_fusion_model(const fs::path& path, std::string* hash) {
  CheckpointHeader h;
  const json j = read_checkpoint(path, "fusion", h);
  FusionModel m;
  const auto kind = meta_value<std::string>(h, "fusion_kind", path);
  if (kind == "asf") m.kind = FusionKind::Asf;
  else if (kind == "concat") m.kind = FusionKind::Concat;
  else fail(ErrorKind::Schema, path.string() + ": unknown fusion kind '" + kind + "'");
  m.teacher = parse_modality(meta_value<std::string>(h, "teacher", path));
  for (const auto& s : meta_value<std::vector<std::string>>(h, "students", path)) m.students.push_back(parse_modality(s));
  const auto d = meta_value<std::size_t>(h, "embed_dim", path);
  const auto classes = meta_value<std::size_t>(h, "num_classes", path);
  const auto dropout = meta_value<double>(h, "dropout", path);
  if (m.kind == FusionKind::Asf) {
    m.asf = FusionParams::zeros(d, m.students.size(), meta_value<std::size_t>(h, "heads", path), classes,
                                meta_value<double>(h, "theta", path), dropout);
  } else {
    m.concat = ClassifierHead::zeros(d * (1 + m.students.size()), classes);
    m.concat_dropout = dropout;
  }
  load_checkpoint_tensors(j, path, m);
  if (hash) *hash = meta_value<std::string>(h, "config_hash", path);
  return m;
}

void write_manifest(const fs::path& dir, const std::string& command, const RunConfig& c,
                    const std::vector<std::string>& outputs) {
  fs::create_directories(dir);
  json j = {{"command", command},
            {"config_hash", config_hash(c)},
            {"seed", c.seed},
            {"version", kVersion},
            {"outputs", outputs},
            {"config", to_json(c)}};
  write_json_file(dir / ("manifest_" + command + ".json"), j);
}

DatasetSplit load_run_data(const RunConfig& c) {
  const fs::path p = c.data_path();
  if (!fs::exists(p)) fail(ErrorKind::Dependency, "missing feature file: " + p.string());
  return load_features(p);
}

void write_shift_trace_csv(const Prediction& p, const fs::path& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) fail(ErrorKind::Configuration, "cannot write " + path.string());
  os << "index,label,prediction,lambda,teacher_norm,displacement_norm,shift_norm\n";
  const auto pred = p.predicted();
  char buf[160];
  for (std::size_t i = 0; i < p.traces.size(); ++i) {
    const ShiftTrace& t = p.traces[i];
    double nt = 0.0, nh = 0.0, ns = 0.0;
    for (std::size_t k = 0; k < t.fused.size(); ++k) {
      const double shift = t.lambda * t.displacement[k];
      const double teacher = t.fused[k] - shift;
      nt += teacher * teacher;
      nh += t.displacement[k] * t.displacement[k];
      ns += shift * shift;
    }
    std::snprintf(buf, sizeof buf, "%zu,%zu,%zu,%.10f,%.10f,%.10f,%.10f\n", i, p.labels[i], pred[i], t.lambda,
                  std::sqrt(nt), std::sqrt(nh), std::sqrt(ns));
    os << buf;
  }
}

EvalArtifacts evaluate_fusion(const FusionModel& fusion, const ModalityModel& teacher,
                              const std::vector<const ModalityModel*>& students, const DatasetSplit& data,
                              SplitName split, const fs::path& dir) {
  const auto& records = data.get(split);
  if (records.empty()) fail(ErrorKind::Configuration, std::string("evaluate: split ") + to_string(split) + " is empty");
  const Prediction p = predict(fusion, teacher, students, records);
  EvalArtifacts out;
  out.report = make_report(p.predicted(), p.labels, data.num_classes, p.lambdas);
  if (dir.empty()) return out;
  fs::create_directories(dir);
  const std::string s = to_string(split);
  write_json_file(dir / ("report_" + s + ".json"), out.report.to_json());
  write_confusion_csv(out.report.confusion, dir / ("confusion_" + s + ".csv"));
  out.files = {"report_" + s + ".json", "confusion_" + s + ".csv"};
  if (fusion.kind == FusionKind::Asf) {
    write_shift_trace_csv(p, dir / ("shift_trace_" + s + ".csv"));
    out.files.push_back("shift_trace_" + s + ".csv");
  }
  return out;
}

PipelineResult run_full_pipeline(const RunConfig& c, const fs::path& dir) {
  c.validate();
  const DatasetSplit data = generate(c.generator());
  const TrainConfig t = c.training();
  PipelineResult r;
  r.teacher = train_teacher(data, t);
  r.students = distill_students(data, &r.teacher.model, t);
  std::vector<const ModalityModel*> students;
  for (const auto& s : r.students.students) students.push_back(&s.model);
  r.fusion = train_fusion(data, &r.teacher.model, students, FusionKind::Asf, t);
  const auto eval = evaluate_fusion(r.fusion.model, r.teacher.model, students, data, SplitName::Test, dir);
  r.test_report = eval.report;
  if (!dir.empty()) {
    write_metrics_csv(r.teacher.metrics, dir / "metrics_teacher.csv");
    std::vector<EpochMetric> student_rows;
    for (const auto& s : r.students.students) student_rows.insert(student_rows.end(), s.metrics.begin(), s.metrics.end());
    write_metrics_csv(student_rows, dir / "metrics_students.csv");
    write_metrics_csv(r.fusion.metrics, dir / "metrics_fusion.csv");
  }
  return r;
}

}  // namespace telme
