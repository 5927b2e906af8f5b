#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "telme/dataset.hpp"
#include "telme/distillation.hpp"
#include "telme/encoders.hpp"
#include "telme/fusion.hpp"
#include "telme/metrics.hpp"
#include "telme/optim.hpp"

namespace telme {

struct FusionHyper {
  std::size_t heads = 4;
  double theta = 0.1;
  double dropout = 0.1;
};

struct TrainConfig {
  std::size_t embed_dim = 32;
  std::size_t batch_size = 32;
  double learning_rate = 1e-3;
  double weight_decay = 0.01;
  double warmup_fraction = 0.1;
  std::size_t teacher_epochs = 20;
  std::size_t student_epochs = 20;
  std::size_t fusion_epochs = 30;
  std::uint64_t seed = 0;
  Modality teacher = Modality::Text;
  KDConfig kd;
  FusionHyper fusion;

  void validate() const;
};

struct EpochMetric {
  std::size_t epoch = 0;
  std::string phase;
  std::string split;
  double loss = 0.0;
  double weighted_f1 = 0.0;
};

void write_metrics_csv(const std::vector<EpochMetric>& rows, const std::filesystem::path& path);

struct TrainedModel {
  ModalityModel model;
  double best_dev_f1 = 0.0;
  std::size_t best_epoch = 0;  // 0 = initialization returned unchanged
  std::vector<EpochMetric> metrics;
};

/// The two non-teacher modalities in canonical (text, audio, visual) order.
std::vector<Modality> student_modalities(Modality teacher);

/// Cross-entropy training of the configured teacher modality.
TrainedModel train_teacher(const DatasetSplit& data, const TrainConfig& config);

struct StudentSet {
  std::vector<TrainedModel> students;  // order of student_modalities(teacher)
  const TrainedModel& get(Modality m) const;
};

/// Trains each student on L_cls + α·L_response + β·L_feature against the
/// frozen teacher. Throws Dependency when `teacher` is null.
StudentSet distill_students(const DatasetSplit& data, const ModalityModel* teacher, const TrainConfig& config);

/// Student training for one modality (exposed for experiments and tests).
TrainedModel train_student(const DatasetSplit& data, Modality modality, const ModalityModel* teacher,
                           const TrainConfig& config);

enum class FusionKind { Asf, Concat };
const char* to_string(FusionKind k);

/// Multimodal head over frozen encoders: either shifting fusion of the teacher
/// embedding, or a linear classifier on the concatenated embeddings.
struct FusionModel {
  FusionKind kind = FusionKind::Asf;
  Modality teacher = Modality::Text;
  std::vector<Modality> students;
  FusionParams asf;
  ClassifierHead concat;
  double concat_dropout = 0.0;

  template <class F>
  void for_each_tensor(F&& f) {
    if (kind == FusionKind::Asf) asf.for_each_tensor(f);
    else concat.for_each_tensor(f);
  }
  template <class F>
  void for_each_tensor(F&& f) const {
    if (kind == FusionKind::Asf) asf.for_each_tensor(f);
    else concat.for_each_tensor(f);
  }
};

struct TrainedFusion {
  FusionModel model;
  double best_dev_f1 = 0.0;
  std::size_t best_epoch = 0;
  std::vector<EpochMetric> metrics;
};

/// Encoders are read-only here; only the fusion head is optimized.
/// `students` lists the non-verbal encoders feeding the fusion, in token order.
TrainedFusion train_fusion(const DatasetSplit& data, const ModalityModel* teacher,
                           const std::vector<const ModalityModel*>& students, FusionKind kind,
                           const TrainConfig& config);

FusionModel init_fusion(const ModalityModel& teacher, const std::vector<const ModalityModel*>& students,
                        FusionKind kind, std::size_t num_classes, const TrainConfig& config);

struct Prediction {
  Matrix logits;
  std::vector<std::size_t> labels;
  std::vector<double> lambdas;       // ASF only
  std::vector<ShiftTrace> traces;    // ASF only
  std::vector<std::size_t> predicted() const { return argmax_rows(logits); }
};

Prediction predict(const ModalityModel& model, const std::vector<FeatureRecord>& records);
Prediction predict(const FusionModel& fusion, const ModalityModel& teacher,
                   const std::vector<const ModalityModel*>& students, const std::vector<FeatureRecord>& records);

double split_f1(const Prediction& p, std::size_t num_classes);

}  // namespace telme
