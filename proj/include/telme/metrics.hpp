#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <vector>

#include <json.hpp>

#include "telme/numerics.hpp"

namespace telme {

/// Support-weighted mean of per-class F1. A class whose precision+recall
/// denominator is empty scores 0.
double weighted_f1(std::span<const std::size_t> predictions, std::span<const std::size_t> labels,
                   std::size_t num_classes);

std::vector<double> per_class_f1(std::span<const std::size_t> predictions, std::span<const std::size_t> labels,
                                 std::size_t num_classes);

struct ConfusionMatrix {
  std::vector<std::vector<std::size_t>> counts;  // counts[label][prediction]
  Matrix normalized;                             // rows sum to 1 for supported classes
};

ConfusionMatrix confusion_matrix(std::span<const std::size_t> predictions, std::span<const std::size_t> labels,
                                 std::size_t num_classes);

/// Fixed-width histogram of λ values over [0, 1]; the last bin is closed.
std::vector<std::size_t> lambda_histogram(std::span<const double> lambdas, std::size_t bins = 10);

struct EvalReport {
  double weighted_f1 = 0.0;
  std::vector<double> per_class_f1;
  std::vector<std::size_t> support;
  ConfusionMatrix confusion;
  std::vector<std::size_t> lambda_hist;  // empty when the model has no shift path

  nlohmann::json to_json() const;
};

EvalReport make_report(std::span<const std::size_t> predictions, std::span<const std::size_t> labels,
                       std::size_t num_classes, std::span<const double> lambdas = {});

void write_confusion_csv(const ConfusionMatrix& cm, const std::filesystem::path& path);

}  // namespace telme
