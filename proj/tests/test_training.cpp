#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "telme/error.hpp"
#include "telme/init.hpp"
#include "telme/optim.hpp"
#include "telme/training.hpp"

using namespace telme;

namespace {

const DatasetSplit& small_data() {
  static const DatasetSplit data = [] {
    GeneratorConfig g;
    g.train_dialogues = 24;
    g.dev_dialogues = 6;
    g.test_dialogues = 6;
    g.seed = 77;
    return generate(g);
  }();
  return data;
}

TrainConfig small_config() {
  TrainConfig c;
  c.embed_dim = 8;
  c.batch_size = 16;
  c.teacher_epochs = 3;
  c.student_epochs = 3;
  c.fusion_epochs = 3;
  c.fusion.heads = 2;
  c.seed = 3;
  return c;
}

double max_dev_f1(const std::vector<EpochMetric>& rows) {
  double best = -1.0;
  for (const auto& m : rows)
    if (m.split == "dev") best = std::max(best, m.weighted_f1);
  return best;
}

}  // namespace

TEST(TrainTeacher, ZeroEpochsReturnsInitialization) {
  TrainConfig c = small_config();
  c.teacher_epochs = 0;
  const auto t = train_teacher(small_data(), c);
  EXPECT_EQ(t.best_epoch, 0u);
  const auto& data = small_data();
  const auto init =
      init_modality_model(Modality::Text, data.dims.text, c.embed_dim, data.num_classes, derive_seed(c.seed, "teacher:text:init"));
  EXPECT_EQ(t.model, init);
}

TEST(TrainTeacher, DeterministicPerSeed) {
  const auto a = train_teacher(small_data(), small_config());
  const auto b = train_teacher(small_data(), small_config());
  EXPECT_EQ(a.model, b.model);
  ASSERT_EQ(a.metrics.size(), b.metrics.size());
  for (std::size_t i = 0; i < a.metrics.size(); ++i) EXPECT_EQ(a.metrics[i].loss, b.metrics[i].loss);
}

TEST(TrainTeacher, ReturnedCheckpointIsBestOnDev) {
  const auto t = train_teacher(small_data(), small_config());
  EXPECT_EQ(t.best_dev_f1, max_dev_f1(t.metrics));
  EXPECT_EQ(split_f1(predict(t.model, small_data().dev), small_data().num_classes), t.best_dev_f1);
}

TEST(TrainTeacher, EmptyTrainingSplitIsConfigurationError) {
  DatasetSplit empty = small_data();
  empty.train.clear();
  try {
    train_teacher(empty, small_config());
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Configuration);
  }
}

TEST(DistillStudents, MissingTeacherIsDependencyError) {
  try {
    distill_students(small_data(), nullptr, small_config());
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Dependency);
  }
}

TEST(DistillStudents, TeacherIsNotModified) {
  const auto teacher = train_teacher(small_data(), small_config());
  const ModalityModel before = teacher.model;
  const auto students = distill_students(small_data(), &teacher.model, small_config());
  EXPECT_EQ(teacher.model, before);
  ASSERT_EQ(students.students.size(), 2u);
  EXPECT_EQ(students.students[0].model.encoder.modality, Modality::Audio);
  EXPECT_EQ(students.students[1].model.encoder.modality, Modality::Visual);
}

TEST(DistillStudents, ZeroWeightsReduceToCrossEntropyTraining) {
  TrainConfig c = small_config();
  c.kd.alpha = 0.0;
  c.kd.beta = 0.0;
  const auto teacher = train_teacher(small_data(), c);
  const auto kd = distill_students(small_data(), &teacher.model, c);
  for (Modality m : {Modality::Audio, Modality::Visual}) {
    const auto plain = train_student(small_data(), m, nullptr, c);
    EXPECT_EQ(kd.get(m).model, plain.model);
  }
}

TEST(DistillStudents, KnowledgeDistillationChangesStudents) {
  const auto teacher = train_teacher(small_data(), small_config());
  const auto kd = distill_students(small_data(), &teacher.model, small_config());
  const auto plain = train_student(small_data(), Modality::Audio, nullptr, small_config());
  EXPECT_FALSE(kd.get(Modality::Audio).model == plain.model);
}

TEST(TrainFusion, ZeroEpochsEqualsInitialization) {
  TrainConfig c = small_config();
  const auto teacher = train_teacher(small_data(), c);
  const auto kd = distill_students(small_data(), &teacher.model, c);
  const std::vector<const ModalityModel*> st = {&kd.get(Modality::Audio).model, &kd.get(Modality::Visual).model};
  c.fusion_epochs = 0;
  const auto f = train_fusion(small_data(), &teacher.model, st, FusionKind::Asf, c);
  const auto init = init_fusion(teacher.model, st, FusionKind::Asf, small_data().num_classes, c);
  std::vector<const Matrix*> a = tensor_ptrs(f.model), b = tensor_ptrs(init);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(*a[i], *b[i]);
}

TEST(TrainFusion, EncodersStayFrozenAndRunIsDeterministic) {
  const TrainConfig c = small_config();
  const auto teacher = train_teacher(small_data(), c);
  const auto kd = distill_students(small_data(), &teacher.model, c);
  const ModalityModel t0 = teacher.model, a0 = kd.get(Modality::Audio).model, v0 = kd.get(Modality::Visual).model;
  const std::vector<const ModalityModel*> st = {&kd.get(Modality::Audio).model, &kd.get(Modality::Visual).model};
  for (FusionKind kind : {FusionKind::Asf, FusionKind::Concat}) {
    const auto f1 = train_fusion(small_data(), &teacher.model, st, kind, c);
    const auto f2 = train_fusion(small_data(), &teacher.model, st, kind, c);
    EXPECT_EQ(teacher.model, t0);
    EXPECT_EQ(*st[0], a0);
    EXPECT_EQ(*st[1], v0);
    std::vector<const Matrix*> a = tensor_ptrs(f1.model), b = tensor_ptrs(f2.model);
    for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(*a[i], *b[i]);
    EXPECT_EQ(f1.best_dev_f1, max_dev_f1(f1.metrics));
  }
}

TEST(TrainFusion, InitializedFusionPredictsLikeTeacher) {
  const TrainConfig c = small_config();
  const auto teacher = train_teacher(small_data(), c);
  const auto kd = distill_students(small_data(), &teacher.model, c);
  const std::vector<const ModalityModel*> st = {&kd.get(Modality::Audio).model, &kd.get(Modality::Visual).model};
  const auto concat = init_fusion(teacher.model, st, FusionKind::Concat, small_data().num_classes, c);
  const auto a = predict(concat, teacher.model, st, small_data().test);
  const auto b = predict(teacher.model, small_data().test);
  for (std::size_t i = 0; i < a.logits.rows(); ++i)
    for (std::size_t j = 0; j < a.logits.cols(); ++j) EXPECT_NEAR(a.logits(i, j), b.logits(i, j), 1e-12);
}

TEST(TrainFusion, MissingTeacherIsDependencyError) {
  EXPECT_THROW(train_fusion(small_data(), nullptr, {}, FusionKind::Asf, small_config()), Error);
}

TEST(MetricsCsv, WritesHeaderAndRows) {
  const auto t = train_teacher(small_data(), small_config());
  const auto p = std::filesystem::temp_directory_path() / "telme_metrics_test.csv";
  write_metrics_csv(t.metrics, p);
  std::ifstream is(p);
  std::string line;
  std::getline(is, line);
  EXPECT_EQ(line, "epoch,phase,split,loss,weighted_f1");
  std::size_t rows = 0;
  while (std::getline(is, line)) ++rows;
  EXPECT_EQ(rows, t.metrics.size());
}

TEST(TrainConfigTest, ValidateRejectsBadValues) {
  TrainConfig c;
  c.batch_size = 1;
  EXPECT_THROW(c.validate(), Error);
  c = TrainConfig{};
  c.warmup_fraction = 1.5;
  EXPECT_THROW(c.validate(), Error);
}
