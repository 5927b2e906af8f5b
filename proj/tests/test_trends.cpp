// Regression bounds on the default synthetic generator. These train real
// models, so they run on the full-size default data.

#include <gtest/gtest.h>

#include <cmath>

#include "telme/config.hpp"
#include "telme/metrics.hpp"
#include "telme/training.hpp"

using namespace telme;

namespace {

struct SplitScore {
  double f1 = 0.0;
  double accuracy = 0.0;
  std::size_t n = 0;
};

SplitScore score(const Prediction& p, std::size_t classes) {
  const auto pred = p.predicted();
  std::size_t hits = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) hits += pred[i] == p.labels[i];
  return {weighted_f1(pred, p.labels, classes), double(hits) / double(pred.size()), pred.size()};
}

// Unimodal CE-only model for one modality, scored on the test split.
SplitScore unimodal(const RunConfig& c, Modality m) {
  const DatasetSplit data = generate(c.generator());
  const TrainedModel t = train_student(data, m, nullptr, c.training());
  return score(predict(t.model, data.test), data.num_classes);
}

}  // namespace

TEST(Trends, ModalityGapOnDefaultGenerator) {
  double text = 0.0, audio = 0.0, visual = 0.0;
  const int seeds = 5;
  for (int s = 1; s <= seeds; ++s) {
    RunConfig c;
    c.seed = s;
    text += unimodal(c, Modality::Text).f1 / seeds;
    audio += unimodal(c, Modality::Audio).f1 / seeds;
    visual += unimodal(c, Modality::Visual).f1 / seeds;
  }
  RecordProperty("text", std::to_string(text));
  RecordProperty("audio", std::to_string(audio));
  RecordProperty("visual", std::to_string(visual));
  EXPECT_GE(text - audio, 0.05) << text << " vs " << audio;
  EXPECT_GE(audio - visual, 0.05) << audio << " vs " << visual;
}

TEST(Trends, TeacherBeatsChanceOnDev) {
  RunConfig c;
  const DatasetSplit data = generate(c.generator());
  const TrainedModel t = train_teacher(data, c.training());
  const SplitScore dev = score(predict(t.model, data.dev), data.num_classes);
  const double chance = 0.25;
  const double sigma = std::sqrt(chance * (1 - chance) / double(dev.n));
  EXPECT_GT(dev.f1, chance + 3 * sigma);
  EXPECT_LE(t.best_epoch, c.train.teacher_epochs);
}

TEST(Trends, NoSignalMeansChance) {
  // Predictions carry no label information, so accuracy is binomial around
  // Σ_c q_c π_c, which is 1/C for uniform classes whatever q the model picks.
  const int seeds = 5;
  for (Modality m : {Modality::Text, Modality::Audio, Modality::Visual}) {
    double acc = 0.0, f1 = 0.0;
    std::size_t n = 0;
    for (int s = 1; s <= seeds; ++s) {
      RunConfig c;
      c.seed = s;
      c.data.sep_text = c.data.sep_audio = c.data.sep_visual = 0.0;
      const SplitScore sc = unimodal(c, m);
      acc += sc.accuracy * double(sc.n);
      f1 += sc.f1 / seeds;
      n += sc.n;
    }
    acc /= double(n);
    const double chance = 0.25;
    const double bound = 3 * std::sqrt(chance * (1 - chance) / double(n));
    EXPECT_NEAR(acc, chance, bound) << to_string(m);
    EXPECT_LE(f1, chance + bound) << to_string(m);
  }
}

TEST(Trends, SkewedClassPriorsNoSignalMatchesImpliedChance) {
  // With skewed priors the implied chance accuracy is at most max_c π_c.
  RunConfig c;
  c.data.class_probs = {0.55, 0.15, 0.15, 0.15};
  c.data.sep_text = c.data.sep_audio = c.data.sep_visual = 0.0;
  double acc = 0.0;
  std::size_t n = 0;
  for (int s = 1; s <= 5; ++s) {
    c.seed = s;
    const SplitScore sc = unimodal(c, Modality::Text);
    acc += sc.accuracy * double(sc.n);
    n += sc.n;
  }
  acc /= double(n);
  EXPECT_LE(acc, 0.55 + 3 * std::sqrt(0.55 * 0.45 / double(n)));
}
