// telme: command-line driver for data generation, the three training phases,
// evaluation, ablation grids and gradient checks.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "telme/ablation.hpp"
#include "telme/config.hpp"
#include "telme/error.hpp"
#include "telme/gradcheck.hpp"
#include "telme/init.hpp"
#include "telme/pipeline.hpp"

namespace fs = std::filesystem;
using namespace telme;

namespace {

enum ExitCode { kOk = 0, kUsage = 1, kDependency = 2, kCheckFailure = 3 };

struct CommonOptions {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out_dir;
  std::size_t threads = 1;
  std::vector<std::string> overrides;
};

void add_common(CLI::App* cmd, CommonOptions& o) {
  cmd->add_option("--config", o.config_path, "Run config JSON (default: $TELME_CONFIG, else built-in defaults)");
  cmd->add_option("--seed", o.seed, "Global seed");
  cmd->add_option("--out-dir", o.out_dir, "Output directory (paths.out_dir)");
  cmd->add_option("--threads", o.threads, "Worker threads for ablate")->check(CLI::PositiveNumber);
  cmd->add_option("--set", o.overrides, "Override a config value, e.g. --set kd.alpha=0.1 (repeatable)");
}

RunConfig resolve_config(const CommonOptions& o) {
  std::string path = o.config_path;
  if (path.empty())
    if (const char* env = std::getenv(kConfigEnvVar)) path = env;
  RunConfig c = path.empty() ? RunConfig{} : load_run_config(path);
  std::vector<std::string> overrides = o.overrides;
  if (o.seed) overrides.push_back("seed=" + std::to_string(*o.seed));
  if (!o.out_dir.empty()) overrides.push_back("paths.out_dir=" + nlohmann::json(o.out_dir).dump());
  c = with_overrides(c, overrides);
  c.validate();
  return c;
}

std::vector<const ModalityModel*> pointers(const std::vector<ModalityModel>& models) {
  std::vector<const ModalityModel*> out;
  for (const auto& m : models) out.push_back(&m);
  return out;
}

void check_hash(const std::string& found, const std::string& expected, const fs::path& source, bool allow) {
  if (found == expected || allow) return;
  fail(ErrorKind::Configuration, source.string() + " was produced with config hash " + found +
                                     " but the active config hashes to " + expected +
                                     " (pass --allow-config-mismatch to evaluate anyway)");
}

int cmd_gen_data(const RunConfig& c, const std::string& out) {
  const fs::path path = out.empty() ? c.data_path() : fs::path(out);
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const DatasetSplit data = generate(c.generator());
  save_features(data, path);
  write_manifest(c.out_dir(), "gen-data", c, {path.string()});
  std::printf("wrote %zu/%zu/%zu records to %s\n", data.train.size(), data.dev.size(), data.test.size(),
              path.string().c_str());
  return kOk;
}

int cmd_train_teacher(const RunConfig& c) {
  const DatasetSplit data = load_run_data(c);
  const TrainedModel t = train_teacher(data, c.training());
  const fs::path ckpt = teacher_checkpoint_path(c);
  save_modality_model(ckpt, t.model, c);
  const fs::path metrics = c.out_dir() / "metrics_teacher.csv";
  write_metrics_csv(t.metrics, metrics);
  write_manifest(c.out_dir(), "train-teacher", c, {ckpt.string(), metrics.string()});
  std::printf("teacher %s: best dev weighted F1 %.4f at epoch %zu\n", to_string(c.train.teacher), t.best_dev_f1,
              t.best_epoch);
  return kOk;
}

int cmd_distill(const RunConfig& c) {
  const DatasetSplit data = load_run_data(c);
  const ModalityModel teacher = load_modality_model(teacher_checkpoint_path(c));
  const StudentSet students = distill_students(data, &teacher, c.training());
  std::vector<std::string> outputs;
  std::vector<EpochMetric> rows;
  for (const auto& s : students.students) {
    const fs::path ckpt = student_checkpoint_path(c, s.model.encoder.modality);
    save_modality_model(ckpt, s.model, c);
    outputs.push_back(ckpt.string());
    rows.insert(rows.end(), s.metrics.begin(), s.metrics.end());
    std::printf("student %s: best dev weighted F1 %.4f at epoch %zu\n", to_string(s.model.encoder.modality),
                s.best_dev_f1, s.best_epoch);
  }
  const fs::path metrics = c.out_dir() / "metrics_students.csv";
  write_metrics_csv(rows, metrics);
  outputs.push_back(metrics.string());
  write_manifest(c.out_dir(), "distill", c, outputs);
  return kOk;
}

std::vector<ModalityModel> load_students(const RunConfig& c, std::vector<std::string>* hashes = nullptr,
                                         std::vector<fs::path>* paths = nullptr) {
  std::vector<ModalityModel> out;
  for (Modality m : student_modalities(c.train.teacher)) {
    std::string hash;
    const fs::path p = student_checkpoint_path(c, m);
    out.push_back(load_modality_model(p, &hash));
    if (hashes) hashes->push_back(hash);
    if (paths) paths->push_back(p);
  }
  return out;
}

int cmd_train_fusion(const RunConfig& c, const std::string& kind_name) {
  FusionKind kind;
  if (kind_name == "asf") kind = FusionKind::Asf;
  else if (kind_name == "concat") kind = FusionKind::Concat;
  else fail(ErrorKind::Configuration, "--kind must be asf or concat");
  const DatasetSplit data = load_run_data(c);
  const ModalityModel teacher = load_modality_model(teacher_checkpoint_path(c));
  const auto students = load_students(c);
  const TrainedFusion f = train_fusion(data, &teacher, pointers(students), kind, c.training());
  const fs::path ckpt = fusion_checkpoint_path(c);
  save_fusion_model(ckpt, f.model, c);
  const fs::path metrics = c.out_dir() / "metrics_fusion.csv";
  write_metrics_csv(f.metrics, metrics);
  write_manifest(c.out_dir(), "train-fusion", c, {ckpt.string(), metrics.string()});
  std::printf("fusion %s: best dev weighted F1 %.4f at epoch %zu\n", to_string(kind), f.best_dev_f1, f.best_epoch);
  return kOk;
}

int cmd_evaluate(const RunConfig& c, const std::string& split_name, bool untrained, bool allow_mismatch) {
  const SplitName split = parse_split(split_name);
  const DatasetSplit data = load_run_data(c);
  const TrainConfig t = c.training();
  ModalityModel teacher;
  std::vector<ModalityModel> students;
  FusionModel fusion;
  if (untrained) {
    teacher = init_modality_model(t.teacher, data.dims.of(t.teacher), t.embed_dim, data.num_classes,
                                  derive_seed(t.seed, std::string("teacher:") + to_string(t.teacher) + ":init"));
    for (Modality m : student_modalities(t.teacher))
      students.push_back(init_modality_model(m, data.dims.of(m), t.embed_dim, data.num_classes,
                                             derive_seed(t.seed, std::string("student:") + to_string(m) + ":init")));
    fusion = init_fusion(teacher, pointers(students), FusionKind::Asf, data.num_classes, t);
  } else {
    const std::string expected = config_hash(c);
    std::string hash;
    teacher = load_modality_model(teacher_checkpoint_path(c), &hash);
    check_hash(hash, expected, teacher_checkpoint_path(c), allow_mismatch);
    std::vector<std::string> hashes;
    std::vector<fs::path> paths;
    students = load_students(c, &hashes, &paths);
    for (std::size_t i = 0; i < hashes.size(); ++i) check_hash(hashes[i], expected, paths[i], allow_mismatch);
    fusion = load_fusion_model(fusion_checkpoint_path(c), &hash);
    check_hash(hash, expected, fusion_checkpoint_path(c), allow_mismatch);
  }
  const auto eval = evaluate_fusion(fusion, teacher, pointers(students), data, split, c.out_dir());
  std::vector<std::string> outputs;
  for (const auto& f : eval.files) outputs.push_back((c.out_dir() / f).string());
  write_manifest(c.out_dir(), "evaluate", c, outputs);
  std::printf("%s weighted F1 %.4f%s\n", split_name.c_str(), eval.report.weighted_f1, untrained ? " (untrained)" : "");
  return kOk;
}

int cmd_ablate(const RunConfig& c, const std::string& grid_path, const std::vector<std::string>& presets,
               const std::vector<std::uint64_t>& seeds, std::size_t threads) {
  GridSpec spec;
  if (!grid_path.empty()) {
    spec = load_grid_spec(grid_path);
  } else {
    nlohmann::json j = {{"presets", presets.empty() ? std::vector<std::string>{"table3", "table4", "teacher"} : presets}};
    spec = parse_grid_spec(j);
  }
  if (!seeds.empty()) spec.seeds = seeds;
  const AblationGrid grid = run_ablation(spec, c, threads);
  const fs::path dir = c.out_dir() / "ablation";
  std::vector<std::string> outputs;
  for (const auto& f : write_ablation(grid, dir)) outputs.push_back((dir / f).string());
  write_manifest(c.out_dir(), "ablate", c, outputs);
  std::string last;
  for (const auto& r : grid.rows) {
    if (r.cell.key() == last) continue;
    last = r.cell.key();
    std::printf("%-32s mean weighted F1 %.4f\n", last.c_str(), grid.cell_mean(last));
  }
  for (const auto& t : trend_checks(grid))
    std::printf("trend %-30s %-3s margin %+.4f  %s\n", t.name.c_str(), t.holds ? "yes" : "no", t.margin, t.detail.c_str());
  return kOk;
}

int cmd_gradcheck(const std::string& loss, std::size_t seeds) {
  const LossId id = parse_loss_id(loss);
  double worst = 0.0;
  for (std::size_t s = 1; s <= seeds; ++s) {
    const double e = gradient_check(id, s);
    worst = std::max(worst, e);
    std::printf("%s seed %zu max rel err %.3e\n", to_string(id), s, e);
  }
  const bool ok = worst <= 1e-4;
  std::printf("%s: max rel err %.3e over %zu seeds: %s\n", to_string(id), worst, seeds, ok ? "PASS" : "FAIL");
  return ok ? kOk : kCheckFailure;
}

int exit_code(ErrorKind k) {
  switch (k) {
    case ErrorKind::Dependency: return kDependency;
    case ErrorKind::CheckFailure: return kCheckFailure;
    default: return kUsage;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Teacher-leading multimodal fusion with cross-modal distillation (desk scale)"};
  app.require_subcommand(1);
  CommonOptions common;

  auto* gen = app.add_subcommand("gen-data", "Generate the synthetic feature file");
  std::string gen_out;
  gen->add_option("--out", gen_out, "Feature file path (default: paths.data_file under the out dir)");
  auto* teacher = app.add_subcommand("train-teacher", "Train the teacher encoder");
  auto* distill = app.add_subcommand("distill", "Distill the student encoders from the teacher checkpoint");
  auto* fusion = app.add_subcommand("train-fusion", "Train the fusion head over frozen encoders");
  std::string kind = "asf";
  fusion->add_option("--kind", kind, "asf or concat")->check(CLI::IsMember({"asf", "concat"}));
  auto* evaluate = app.add_subcommand("evaluate", "Evaluate the fused model and write report files");
  std::string split = "test";
  bool untrained = false, allow_mismatch = false;
  evaluate->add_option("--split", split, "train, dev or test")->check(CLI::IsMember({"train", "dev", "test"}));
  evaluate->add_flag("--untrained", untrained, "Evaluate freshly initialized models instead of checkpoints");
  evaluate->add_flag("--allow-config-mismatch", allow_mismatch, "Accept checkpoints trained under another config");
  auto* ablate = app.add_subcommand("ablate", "Run an ablation grid");
  std::string grid_path;
  std::vector<std::string> presets;
  std::vector<std::uint64_t> seeds;
  ablate->add_option("--grid", grid_path, "Grid spec JSON");
  ablate->add_option("--preset", presets, "table3, table4, teacher (repeatable; default all)");
  ablate->add_option("--seeds", seeds, "Seeds overriding the grid spec");
  auto* show = app.add_subcommand("show-config", "Print the resolved config and its hash");
  auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference gradient check");
  std::string loss;
  std::size_t gradcheck_seeds = 20;
  gradcheck->add_option("loss", loss, "cross_entropy, response_loss, feature_loss or fused_forward")->required();
  gradcheck->add_option("seeds", gradcheck_seeds, "Number of seeds")->check(CLI::PositiveNumber);

  for (auto* cmd : {gen, teacher, distill, fusion, evaluate, ablate, show}) add_common(cmd, common);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (gradcheck->parsed()) return cmd_gradcheck(loss, gradcheck_seeds);
    const RunConfig c = resolve_config(common);
    if (show->parsed()) {
      std::printf("%s\n# config_hash %s\n", to_json(c).dump(2).c_str(), config_hash(c).c_str());
      return kOk;
    }
    fs::create_directories(c.out_dir());
    if (gen->parsed()) return cmd_gen_data(c, gen_out);
    if (teacher->parsed()) return cmd_train_teacher(c);
    if (distill->parsed()) return cmd_distill(c);
    if (fusion->parsed()) return cmd_train_fusion(c, kind);
    if (evaluate->parsed()) return cmd_evaluate(c, split, untrained, allow_mismatch);
    if (ablate->parsed()) return cmd_ablate(c, grid_path, presets, seeds, common.threads);
  } catch (const Error& e) {
    std::fprintf(stderr, "error (%s): %s\n", to_string(e.kind()), e.what());
    return exit_code(e.kind());
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kUsage;
  }
  return kUsage;
}
