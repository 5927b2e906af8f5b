#include "telme/encoders.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "telme/error.hpp"
#include "telme/init.hpp"

namespace telme {

StubEncoder StubEncoder::zeros(Modality m, std::size_t input_dim, std::size_t embed_dim) {
  const std::size_t hidden = 2 * embed_dim;
  return StubEncoder{m, Matrix(hidden, input_dim), Matrix(1, hidden), Matrix(embed_dim, hidden), Matrix(1, embed_dim)};
}

StubEncoder StubEncoder::glorot(Modality m, std::size_t input_dim, std::size_t embed_dim, std::mt19937_64& rng) {
  StubEncoder e = zeros(m, input_dim, embed_dim);
  glorot_uniform(e.w1, rng);
  glorot_uniform(e.w2, rng);
  return e;
}

ClassifierHead ClassifierHead::zeros(std::size_t embed_dim, std::size_t num_classes) {
  return ClassifierHead{Matrix(num_classes, embed_dim), Matrix(1, num_classes)};
}

ClassifierHead ClassifierHead::glorot(std::size_t embed_dim, std::size_t num_classes, std::mt19937_64& rng) {
  ClassifierHead h = zeros(embed_dim, num_classes);
  glorot_uniform(h.w, rng);
  return h;
}

std::vector<double> encode(const StubEncoder& enc, std::span<const double> input) {
  if (input.size() != enc.input_dim())
    fail(ErrorKind::InvalidInput, std::string(to_string(enc.modality)) + " encoder expects dim " +
                                      std::to_string(enc.input_dim()) + ", got " + std::to_string(input.size()));
  Matrix x(1, input.size(), std::vector<double>(input.begin(), input.end()));
  Matrix y = encode_batch(enc, x);
  return {y.flat().begin(), y.flat().end()};
}

Matrix encode_batch(const StubEncoder& enc, const Matrix& inputs, EncoderCache* cache) {
  if (inputs.cols() != enc.input_dim())
    fail(ErrorKind::InvalidInput, std::string(to_string(enc.modality)) + " encoder expects dim " +
                                      std::to_string(enc.input_dim()) + ", got " + std::to_string(inputs.cols()));
  Matrix pre = linear_forward(inputs, enc.w1, enc.b1);
  Matrix hidden = gelu(pre);
  Matrix out = linear_forward(hidden, enc.w2, enc.b2);
  if (cache) {
    cache->input = inputs;
    cache->pre = std::move(pre);
    cache->hidden = std::move(hidden);
  }
  return out;
}

Matrix encode_backward(const StubEncoder& enc, const EncoderCache& cache, const Matrix& dembed, StubEncoder& grads) {
  Matrix dhidden = linear_backward(cache.hidden, enc.w2, dembed, grads.w2, grads.b2);
  Matrix dpre = gelu_backward(cache.pre, dhidden);
  return linear_backward(cache.input, enc.w1, dpre, grads.w1, grads.b1);
}

std::vector<double> classify(const ClassifierHead& head, std::span<const double> embedding) {
  if (embedding.size() != head.input_dim())
    fail(ErrorKind::InvalidInput, "classifier expects dim " + std::to_string(head.input_dim()) + ", got " +
                                      std::to_string(embedding.size()));
  Matrix y = linear_forward(Matrix(1, embedding.size(), std::vector<double>(embedding.begin(), embedding.end())),
                            head.w, head.b);
  return {y.flat().begin(), y.flat().end()};
}

Matrix classify_batch(const ClassifierHead& head, const Matrix& embeddings) {
  if (embeddings.cols() != head.input_dim())
    fail(ErrorKind::InvalidInput, "classifier expects dim " + std::to_string(head.input_dim()) + ", got " +
                                      std::to_string(embeddings.cols()));
  return linear_forward(embeddings, head.w, head.b);
}

Matrix classify_backward(const ClassifierHead& head, const Matrix& embeddings, const Matrix& dlogits,
                         ClassifierHead& grads) {
  return linear_backward(embeddings, head.w, dlogits, grads.w, grads.b);
}

namespace {

void check_labels(const Matrix& logits, std::span<const std::size_t> labels) {
  if (logits.rows() == 0) fail(ErrorKind::InvalidInput, "cross_entropy_loss: empty batch");
  if (labels.size() != logits.rows()) fail(ErrorKind::InvalidInput, "cross_entropy_loss: label count mismatch");
  for (std::size_t y : labels)
    if (y >= logits.cols())
      fail(ErrorKind::InvalidInput, "cross_entropy_loss: label " + std::to_string(y) + " out of range");
}

double log_sum_exp(std::span<const double> x) {
  const double mx = *std::max_element(x.begin(), x.end());
  double s = 0.0;
  for (double v : x) s += std::exp(v - mx);
  return mx + std::log(s);
}

}  // namespace

double cross_entropy_loss(const Matrix& logits, std::span<const std::size_t> labels) {
  check_labels(logits, labels);
  double total = 0.0;
  for (std::size_t i = 0; i < logits.rows(); ++i) total += log_sum_exp(logits.row(i)) - logits(i, labels[i]);
  return total / static_cast<double>(logits.rows());
}

CrossEntropyGrad cross_entropy_grad(const Matrix& logits, std::span<const std::size_t> labels) {
  check_labels(logits, labels);
  const double inv_b = 1.0 / static_cast<double>(logits.rows());
  CrossEntropyGrad out{cross_entropy_loss(logits, labels), softmax_rows(logits, 1.0)};
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    out.dlogits(i, labels[i]) -= 1.0;
    for (double& v : out.dlogits.row(i)) v *= inv_b;
  }
  return out;
}

bool operator==(const ModalityModel& a, const ModalityModel& b) {
  return a.encoder.modality == b.encoder.modality && a.encoder.w1 == b.encoder.w1 && a.encoder.b1 == b.encoder.b1 &&
         a.encoder.w2 == b.encoder.w2 && a.encoder.b2 == b.encoder.b2 && a.head.w == b.head.w && a.head.b == b.head.b;
}

ModalityModel init_modality_model(Modality m, std::size_t input_dim, std::size_t embed_dim, std::size_t num_classes,
                                  std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  ModalityModel model{StubEncoder::glorot(m, input_dim, embed_dim, rng), {}};
  model.head = ClassifierHead::glorot(embed_dim, num_classes, rng);
  return model;
}

Matrix gather_features(const std::vector<FeatureRecord>& records, std::span<const std::size_t> indices, Modality m) {
  if (indices.empty()) return Matrix();
  const std::size_t dim = records[indices.front()].features(m).size();
  Matrix x(indices.size(), dim);
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const auto& f = records[indices[i]].features(m);
    std::copy(f.begin(), f.end(), x.row(i).begin());
  }
  return x;
}

Matrix gather_features(const std::vector<FeatureRecord>& records, Modality m) {
  std::vector<std::size_t> all(records.size());
  std::iota(all.begin(), all.end(), std::size_t{0});
  return gather_features(records, all, m);
}

std::vector<std::size_t> gather_labels(const std::vector<FeatureRecord>& records, std::span<const std::size_t> indices) {
  std::vector<std::size_t> y;
  y.reserve(indices.size());
  for (std::size_t i : indices) y.push_back(records[i].label);
  return y;
}

std::vector<std::size_t> gather_labels(const std::vector<FeatureRecord>& records) {
  std::vector<std::size_t> y;
  y.reserve(records.size());
  for (const auto& r : records) y.push_back(r.label);
  return y;
}

std::vector<std::size_t> argmax_rows(const Matrix& logits) {
  std::vector<std::size_t> out(logits.rows());
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    auto row = logits.row(i);
    out[i] = static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
  }
  return out;
}

}  // namespace telme
