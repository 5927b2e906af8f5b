#include "telme/metrics.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>

#include "telme/error.hpp"

namespace telme {

namespace {

void check_inputs(std::span<const std::size_t> predictions, std::span<const std::size_t> labels,
                  std::size_t num_classes) {
  if (labels.empty()) fail(ErrorKind::InvalidInput, "metrics: empty input");
  if (predictions.size() != labels.size()) fail(ErrorKind::InvalidInput, "metrics: length mismatch");
  for (std::size_t i = 0; i < labels.size(); ++i)
    if (labels[i] >= num_classes || predictions[i] >= num_classes)
      fail(ErrorKind::InvalidInput, "metrics: class index out of range at position " + std::to_string(i));
}

std::vector<std::vector<std::size_t>> count(std::span<const std::size_t> predictions,
                                            std::span<const std::size_t> labels, std::size_t num_classes) {
  std::vector<std::vector<std::size_t>> c(num_classes, std::vector<std::size_t>(num_classes, 0));
  for (std::size_t i = 0; i < labels.size(); ++i) ++c[labels[i]][predictions[i]];
  return c;
}

}  // namespace

std::vector<double> per_class_f1(std::span<const std::size_t> predictions, std::span<const std::size_t> labels,
                                 std::size_t num_classes) {
  check_inputs(predictions, labels, num_classes);
  const auto c = count(predictions, labels, num_classes);
  std::vector<double> f1(num_classes, 0.0);
  for (std::size_t k = 0; k < num_classes; ++k) {
    std::size_t predicted = 0, actual = 0;
    for (std::size_t j = 0; j < num_classes; ++j) {
      predicted += c[j][k];
      actual += c[k][j];
    }
    // F1 = 2·TP / (2·TP + FP + FN) = 2·TP / (predicted + actual)
    const std::size_t denom = predicted + actual;
    f1[k] = denom == 0 ? 0.0 : 2.0 * static_cast<double>(c[k][k]) / static_cast<double>(denom);
  }
  return f1;
}

double weighted_f1(std::span<const std::size_t> predictions, std::span<const std::size_t> labels,
                   std::size_t num_classes) {
  const auto f1 = per_class_f1(predictions, labels, num_classes);
  std::vector<std::size_t> support(num_classes, 0);
  for (std::size_t y : labels) ++support[y];
  double s = 0.0;
  for (std::size_t k = 0; k < num_classes; ++k) s += static_cast<double>(support[k]) * f1[k];
  return s / static_cast<double>(labels.size());
}

ConfusionMatrix confusion_matrix(std::span<const std::size_t> predictions, std::span<const std::size_t> labels,
                                 std::size_t num_classes) {
  check_inputs(predictions, labels, num_classes);
  ConfusionMatrix cm{count(predictions, labels, num_classes), Matrix(num_classes, num_classes)};
  for (std::size_t i = 0; i < num_classes; ++i) {
    std::size_t total = 0;
    for (std::size_t v : cm.counts[i]) total += v;
    if (total == 0) continue;
    for (std::size_t j = 0; j < num_classes; ++j)
      cm.normalized(i, j) = static_cast<double>(cm.counts[i][j]) / static_cast<double>(total);
  }
  return cm;
}

std::vector<std::size_t> lambda_histogram(std::span<const double> lambdas, std::size_t bins) {
  std::vector<std::size_t> h(bins, 0);
  for (double l : lambdas) {
    const double c = std::clamp(l, 0.0, 1.0);
    ++h[std::min(bins - 1, static_cast<std::size_t>(c * static_cast<double>(bins)))];
  }
  return h;
}

EvalReport make_report(std::span<const std::size_t> predictions, std::span<const std::size_t> labels,
                       std::size_t num_classes, std::span<const double> lambdas) {
  EvalReport r;
  r.weighted_f1 = weighted_f1(predictions, labels, num_classes);
  r.per_class_f1 = per_class_f1(predictions, labels, num_classes);
  r.support.assign(num_classes, 0);
  for (std::size_t y : labels) ++r.support[y];
  r.confusion = confusion_matrix(predictions, labels, num_classes);
  if (!lambdas.empty()) r.lambda_hist = lambda_histogram(lambdas);
  return r;
}

nlohmann::json EvalReport::to_json() const {
  std::vector<std::vector<double>> norm;
  for (std::size_t i = 0; i < confusion.normalized.rows(); ++i)
    norm.emplace_back(confusion.normalized.row(i).begin(), confusion.normalized.row(i).end());
  nlohmann::json j = {{"weighted_f1", weighted_f1},
                      {"per_class_f1", per_class_f1},
                      {"support", support},
                      {"confusion_counts", confusion.counts},
                      {"confusion_normalized", norm}};
  if (!lambda_hist.empty()) j["lambda_histogram"] = {{"bins", lambda_hist.size()}, {"counts", lambda_hist}};
  return j;
}

void write_confusion_csv(const ConfusionMatrix& cm, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) fail(ErrorKind::Configuration, "cannot write " + path.string());
  const std::size_t c = cm.counts.size();
  os << "label";
  for (std::size_t j = 0; j < c; ++j) os << ",pred_" << j;
  for (std::size_t j = 0; j < c; ++j) os << ",count_" << j;
  os << '\n';
  char buf[64];
  for (std::size_t i = 0; i < c; ++i) {
    os << i;
    for (std::size_t j = 0; j < c; ++j) {
      std::snprintf(buf, sizeof buf, ",%.6f", cm.normalized(i, j));
      os << buf;
    }
    for (std::size_t j = 0; j < c; ++j) os << ',' << cm.counts[i][j];
    os << '\n';
  }
}

}  // namespace telme
