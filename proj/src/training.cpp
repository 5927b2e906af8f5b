#include "telme/training.hpp"

#include <cstdio>
#include <fstream>
#include <numeric>
#include <optional>

#include "telme/error.hpp"
#include "telme/init.hpp"

namespace telme {

void TrainConfig::validate() const {
  if (batch_size < 2) fail(ErrorKind::Configuration, "train: batch_size must be >= 2");
  if (embed_dim == 0) fail(ErrorKind::Configuration, "train: embed_dim must be > 0");
  if (!(warmup_fraction >= 0.0 && warmup_fraction <= 1.0))
    fail(ErrorKind::Configuration, "train: warmup_fraction must be in [0, 1]");
  if (!(learning_rate > 0.0)) fail(ErrorKind::Configuration, "train: learning_rate must be > 0");
  if (!(weight_decay >= 0.0)) fail(ErrorKind::Configuration, "train: weight_decay must be >= 0");
  if (fusion.heads == 0 || embed_dim % fusion.heads != 0)
    fail(ErrorKind::Configuration, "train: embed_dim must be divisible by fusion heads");
  if (!(fusion.theta > 0.0)) fail(ErrorKind::Configuration, "train: fusion theta must be > 0");
  if (!(fusion.dropout >= 0.0 && fusion.dropout < 1.0))
    fail(ErrorKind::Configuration, "train: fusion dropout must be in [0, 1)");
  kd.validate();
}

void write_metrics_csv(const std::vector<EpochMetric>& rows, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary);
  if (!os) fail(ErrorKind::Configuration, "cannot write " + path.string());
  os << "epoch,phase,split,loss,weighted_f1\n";
  char buf[256];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%zu,%s,%s,%.10f,%.10f\n", r.epoch, r.phase.c_str(), r.split.c_str(), r.loss,
                  r.weighted_f1);
    os << buf;
  }
}

std::vector<Modality> student_modalities(Modality teacher) {
  std::vector<Modality> out;
  for (Modality m : kAllModalities)
    if (m != teacher) out.push_back(m);
  return out;
}

const TrainedModel& StudentSet::get(Modality m) const {
  for (const auto& s : students)
    if (s.model.encoder.modality == m) return s;
  fail(ErrorKind::Dependency, std::string("no trained student for modality ") + to_string(m));
}

const char* to_string(FusionKind k) { return k == FusionKind::Asf ? "asf" : "concat"; }

double split_f1(const Prediction& p, std::size_t num_classes) {
  return weighted_f1(p.predicted(), p.labels, num_classes);
}

namespace {

std::size_t batches_per_epoch(std::size_t n, std::size_t b) { return n / b + (n % b >= 2 ? 1 : 0); }

void require_train_split(const DatasetSplit& data) {
  if (data.train.empty()) fail(ErrorKind::Configuration, "training split is empty");
}

// Shared epoch bookkeeping for every phase.
struct EpochAccumulator {
  double loss_sum = 0.0;
  std::size_t batches = 0;
  std::vector<std::size_t> predictions;
  std::vector<std::size_t> labels;

  void add(double loss, const Matrix& logits, const std::vector<std::size_t>& y) {
    loss_sum += loss;
    ++batches;
    auto p = argmax_rows(logits);
    predictions.insert(predictions.end(), p.begin(), p.end());
    labels.insert(labels.end(), y.begin(), y.end());
  }
};

void record_epoch(std::vector<EpochMetric>& metrics, std::size_t epoch, const std::string& phase,
                  const EpochAccumulator& acc, const Prediction& dev, std::size_t num_classes, double& dev_f1) {
  if (acc.batches > 0)
    metrics.push_back({epoch, phase, "train", acc.loss_sum / static_cast<double>(acc.batches),
                       weighted_f1(acc.predictions, acc.labels, num_classes)});
  if (!dev.labels.empty()) {
    dev_f1 = split_f1(dev, num_classes);
    metrics.push_back({epoch, phase, "dev", cross_entropy_loss(dev.logits, dev.labels), dev_f1});
  } else {
    dev_f1 = acc.batches > 0 ? weighted_f1(acc.predictions, acc.labels, num_classes) : 0.0;
  }
}

std::string phase_key(const std::string& phase, Modality m) { return phase + ":" + to_string(m); }

TrainedModel train_modality(const DatasetSplit& data, Modality modality, const TrainConfig& config,
                            const std::string& phase, const ModalityModel* teacher, std::size_t epochs) {
  config.validate();
  require_train_split(data);
  const std::string key = phase_key(phase, modality);
  const std::size_t num_classes = data.num_classes;

  TrainedModel out;
  out.model = init_modality_model(modality, data.dims.of(modality), config.embed_dim, num_classes,
                                  derive_seed(config.seed, key + ":init"));
  if (epochs == 0) {
    if (!data.dev.empty()) out.best_dev_f1 = split_f1(predict(out.model, data.dev), num_classes);
    return out;
  }

  const bool distill = teacher && (config.kd.alpha > 0.0 || config.kd.beta > 0.0);
  Matrix teacher_logits, teacher_reprs;
  if (distill) {
    const Matrix x = gather_features(data.train, teacher->encoder.modality);
    teacher_reprs = encode_batch(teacher->encoder, x);
    teacher_logits = classify_batch(teacher->head, teacher_reprs);
  }

  const Matrix train_x = gather_features(data.train, modality);
  const auto train_y = gather_labels(data.train);
  const std::size_t n = data.train.size();
  LinearWarmupSchedule schedule(config.learning_rate, config.warmup_fraction,
                                epochs * batches_per_epoch(n, config.batch_size));
  const AdamWConfig adam{config.weight_decay};
  OptimizerState state;
  ModalityModel model = out.model;
  out.best_dev_f1 = -1.0;

  for (std::size_t epoch = 1; epoch <= epochs; ++epoch) {
    EpochAccumulator acc;
    for (const Batch& batch :
         make_batches(n, config.batch_size, derive_seed(config.seed, key + ":epoch:" + std::to_string(epoch)))) {
      Matrix x(batch.size(), train_x.cols());
      for (std::size_t i = 0; i < batch.size(); ++i)
        std::copy(train_x.row(batch[i]).begin(), train_x.row(batch[i]).end(), x.row(i).begin());
      std::vector<std::size_t> y(batch.size());
      for (std::size_t i = 0; i < batch.size(); ++i) y[i] = train_y[batch[i]];

      EncoderCache cache;
      const Matrix reprs = encode_batch(model.encoder, x, &cache);
      const Matrix logits = classify_batch(model.head, reprs);

      double loss;
      Matrix dlogits, dreprs;
      if (distill) {
        Matrix zt(batch.size(), num_classes), ft(batch.size(), config.embed_dim);
        for (std::size_t i = 0; i < batch.size(); ++i) {
          std::copy(teacher_logits.row(batch[i]).begin(), teacher_logits.row(batch[i]).end(), zt.row(i).begin());
          std::copy(teacher_reprs.row(batch[i]).begin(), teacher_reprs.row(batch[i]).end(), ft.row(i).begin());
        }
        DistillBatch db{logits, &zt, reprs, &ft, y};
        auto obj = student_objective(db, config.kd);
        loss = obj.total;
        dlogits = std::move(obj.dlogits);
        dreprs = std::move(obj.dreprs);
      } else {
        auto ce = cross_entropy_grad(logits, y);
        loss = ce.value;
        dlogits = std::move(ce.dlogits);
        dreprs = Matrix(reprs.rows(), reprs.cols());
      }

      ModalityModel grads = zeros_like(model);
      add_inplace(dreprs, classify_backward(model.head, reprs, dlogits, grads.head));
      encode_backward(model.encoder, cache, dreprs, grads.encoder);
      optimizer_step(tensor_ptrs(model), tensor_ptrs(std::as_const(grads)), state,
                     schedule.lr_at(state.step + 1), adam);
      acc.add(loss, logits, y);
    }

    double dev_f1 = 0.0;
    record_epoch(out.metrics, epoch, key, acc, data.dev.empty() ? Prediction{} : predict(model, data.dev),
                 num_classes, dev_f1);
    if (dev_f1 > out.best_dev_f1) {
      out.best_dev_f1 = dev_f1;
      out.best_epoch = epoch;
      out.model = model;
    }
  }
  return out;
}

}  // namespace

TrainedModel train_teacher(const DatasetSplit& data, const TrainConfig& config) {
  return train_modality(data, config.teacher, config, "teacher", nullptr, config.teacher_epochs);
}

TrainedModel train_student(const DatasetSplit& data, Modality modality, const ModalityModel* teacher,
                           const TrainConfig& config) {
  return train_modality(data, modality, config, "student", teacher, config.student_epochs);
}

StudentSet distill_students(const DatasetSplit& data, const ModalityModel* teacher, const TrainConfig& config) {
  if (!teacher) fail(ErrorKind::Dependency, "distill_students: teacher checkpoint is required");
  if (teacher->encoder.modality != config.teacher)
    fail(ErrorKind::Dependency, std::string("distill_students: teacher checkpoint is for ") +
                                    to_string(teacher->encoder.modality) + ", config expects " +
                                    to_string(config.teacher));
  StudentSet out;
  for (Modality m : student_modalities(config.teacher)) out.students.push_back(train_student(data, m, teacher, config));
  return out;
}

// ---------------------------------------------------------------------------
// Fusion

namespace {

struct EmbeddedSplit {
  Matrix teacher;
  std::vector<Matrix> students;
  std::vector<std::size_t> labels;
};

EmbeddedSplit embed(const std::vector<FeatureRecord>& records, const ModalityModel& teacher,
                    const std::vector<const ModalityModel*>& students) {
  EmbeddedSplit e;
  e.teacher = encode_batch(teacher.encoder, gather_features(records, teacher.encoder.modality));
  for (const ModalityModel* s : students)
    e.students.push_back(encode_batch(s->encoder, gather_features(records, s->encoder.modality)));
  e.labels = gather_labels(records);
  return e;
}

Matrix select_rows(const Matrix& m, std::span<const std::size_t> rows) {
  Matrix out(rows.size(), m.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) std::copy(m.row(rows[i]).begin(), m.row(rows[i]).end(), out.row(i).begin());
  return out;
}

Matrix concat_columns(const Matrix& teacher, const std::vector<Matrix>& students) {
  std::size_t cols = teacher.cols();
  for (const auto& s : students) cols += s.cols();
  Matrix out(teacher.rows(), cols);
  for (std::size_t i = 0; i < teacher.rows(); ++i) {
    auto dst = out.row(i).begin();
    dst = std::copy(teacher.row(i).begin(), teacher.row(i).end(), dst);
    for (const auto& s : students) dst = std::copy(s.row(i).begin(), s.row(i).end(), dst);
  }
  return out;
}

struct FusionStep {
  Matrix logits;
  FusionBatchResult asf;
  Matrix concat_input;  // after dropout
};

FusionStep fusion_forward(const FusionModel& model, const Matrix& teacher, const std::vector<Matrix>& students,
                          Mode mode, std::mt19937_64* rng, bool keep_cache) {
  FusionStep s;
  if (model.kind == FusionKind::Asf) {
    s.asf = fuse_batch(teacher, students, model.asf, mode, rng, keep_cache);
    s.logits = s.asf.logits;
    return s;
  }
  s.concat_input = concat_columns(teacher, students);
  if (mode == Mode::Train && model.concat_dropout > 0.0) {
    std::bernoulli_distribution keep(1.0 - model.concat_dropout);
    const double scale = 1.0 / (1.0 - model.concat_dropout);
    for (double& v : s.concat_input.flat()) v = keep(*rng) ? v * scale : 0.0;
  }
  s.logits = classify_batch(model.concat, s.concat_input);
  return s;
}

}  // namespace

FusionModel init_fusion(const ModalityModel& teacher, const std::vector<const ModalityModel*>& students,
                        FusionKind kind, std::size_t num_classes, const TrainConfig& config) {
  FusionModel m;
  m.kind = kind;
  m.teacher = teacher.encoder.modality;
  for (const ModalityModel* s : students) m.students.push_back(s->encoder.modality);
  const std::size_t d = config.embed_dim;
  if (kind == FusionKind::Asf) {
    if (students.empty()) fail(ErrorKind::Configuration, "fusion: shifting fusion needs at least one student");
    m.asf = FusionParams::init(d, students.size(), config.fusion.heads, num_classes, config.fusion.theta,
                               config.fusion.dropout, derive_seed(config.seed, "fusion:init"), &teacher.head);
  } else {
    // Teacher head on the leading block, zeros on the student blocks.
    m.concat = ClassifierHead::zeros(d * (1 + students.size()), num_classes);
    for (std::size_t r = 0; r < num_classes; ++r)
      for (std::size_t c = 0; c < d; ++c) m.concat.w(r, c) = teacher.head.w(r, c);
    m.concat.b = teacher.head.b;
    m.concat_dropout = config.fusion.dropout;
  }
  return m;
}

TrainedFusion train_fusion(const DatasetSplit& data, const ModalityModel* teacher,
                           const std::vector<const ModalityModel*>& students, FusionKind kind,
                           const TrainConfig& config) {
  config.validate();
  require_train_split(data);
  if (!teacher) fail(ErrorKind::Dependency, "train_fusion: teacher checkpoint is required");
  for (const ModalityModel* s : students)
    if (!s) fail(ErrorKind::Dependency, "train_fusion: student checkpoint is required");

  const std::size_t num_classes = data.num_classes;
  TrainedFusion out;
  out.model = init_fusion(*teacher, students, kind, num_classes, config);
  const std::vector<FeatureRecord> no_records;
  const std::string key = std::string("fusion:") + to_string(kind);
  if (config.fusion_epochs == 0) {
    if (!data.dev.empty()) out.best_dev_f1 = split_f1(predict(out.model, *teacher, students, data.dev), num_classes);
    return out;
  }

  const EmbeddedSplit train = embed(data.train, *teacher, students);
  const std::optional<EmbeddedSplit> dev =
      data.dev.empty() ? std::nullopt : std::optional<EmbeddedSplit>(embed(data.dev, *teacher, students));
  const std::size_t n = data.train.size();
  LinearWarmupSchedule schedule(config.learning_rate, config.warmup_fraction,
                                config.fusion_epochs * batches_per_epoch(n, config.batch_size));
  const AdamWConfig adam{config.weight_decay};
  OptimizerState state;
  std::mt19937_64 dropout_rng(derive_seed(config.seed, key + ":dropout"));
  FusionModel model = out.model;
  out.best_dev_f1 = -1.0;

  for (std::size_t epoch = 1; epoch <= config.fusion_epochs; ++epoch) {
    EpochAccumulator acc;
    for (const Batch& batch :
         make_batches(n, config.batch_size, derive_seed(config.seed, key + ":epoch:" + std::to_string(epoch)))) {
      const Matrix t = select_rows(train.teacher, batch);
      std::vector<Matrix> s;
      for (const auto& m : train.students) s.push_back(select_rows(m, batch));
      std::vector<std::size_t> y(batch.size());
      for (std::size_t i = 0; i < batch.size(); ++i) y[i] = train.labels[batch[i]];

      FusionStep step = fusion_forward(model, t, s, Mode::Train, &dropout_rng, true);
      auto ce = cross_entropy_grad(step.logits, y);
      FusionModel grads = zeros_like(model);
      if (model.kind == FusionKind::Asf) {
        grads.asf = fuse_batch_backward(step.asf, model.asf, ce.dlogits).params;
      } else {
        classify_backward(model.concat, step.concat_input, ce.dlogits, grads.concat);
      }
      optimizer_step(tensor_ptrs(model), tensor_ptrs(std::as_const(grads)), state, schedule.lr_at(state.step + 1),
                     adam);
      acc.add(ce.value, step.logits, y);
    }

    Prediction dev_pred;
    if (dev) {
      FusionStep s = fusion_forward(model, dev->teacher, dev->students, Mode::Eval, nullptr, false);
      dev_pred.logits = std::move(s.logits);
      dev_pred.labels = dev->labels;
    }
    double dev_f1 = 0.0;
    record_epoch(out.metrics, epoch, key, acc, dev_pred, num_classes, dev_f1);
    if (dev_f1 > out.best_dev_f1) {
      out.best_dev_f1 = dev_f1;
      out.best_epoch = epoch;
      out.model = model;
    }
  }
  return out;
}

Prediction predict(const ModalityModel& model, const std::vector<FeatureRecord>& records) {
  Prediction p;
  p.labels = gather_labels(records);
  if (records.empty()) return p;
  p.logits = classify_batch(model.head, encode_batch(model.encoder, gather_features(records, model.encoder.modality)));
  return p;
}

Prediction predict(const FusionModel& fusion, const ModalityModel& teacher,
                   const std::vector<const ModalityModel*>& students, const std::vector<FeatureRecord>& records) {
  if (students.size() != fusion.students.size())
    fail(ErrorKind::Dependency, "predict: fusion expects " + std::to_string(fusion.students.size()) + " students");
  Prediction p;
  p.labels = gather_labels(records);
  if (records.empty()) return p;
  const EmbeddedSplit e = embed(records, teacher, students);
  FusionStep s = fusion_forward(fusion, e.teacher, e.students, Mode::Eval, nullptr, false);
  p.logits = std::move(s.logits);
  if (fusion.kind == FusionKind::Asf) {
    p.traces = std::move(s.asf.traces);
    for (const auto& t : p.traces) p.lambdas.push_back(t.lambda);
  }
  return p;
}

}  // namespace telme
