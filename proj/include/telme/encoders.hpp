#pragma once

#include <cstddef>
#include <random>
#include <span>
#include <vector>

#include "telme/dataset.hpp"
#include "telme/numerics.hpp"

namespace telme {

/// Two-layer stand-in for a pretrained modality encoder:
/// input → affine(2d) → GELU → affine(d).
struct StubEncoder {
  Modality modality = Modality::Text;
  Matrix w1, b1, w2, b2;

  static StubEncoder zeros(Modality m, std::size_t input_dim, std::size_t embed_dim);
  static StubEncoder glorot(Modality m, std::size_t input_dim, std::size_t embed_dim, std::mt19937_64& rng);

  std::size_t input_dim() const noexcept { return w1.cols(); }
  std::size_t embed_dim() const noexcept { return w2.rows(); }

  template <class F>
  void for_each_tensor(F&& f) {
    f("w1", w1); f("b1", b1); f("w2", w2); f("b2", b2);
  }
  template <class F>
  void for_each_tensor(F&& f) const {
    f("w1", w1); f("b1", b1); f("w2", w2); f("b2", b2);
  }
};

struct ClassifierHead {
  Matrix w, b;  // C×d, 1×C

  static ClassifierHead zeros(std::size_t embed_dim, std::size_t num_classes);
  static ClassifierHead glorot(std::size_t embed_dim, std::size_t num_classes, std::mt19937_64& rng);

  std::size_t input_dim() const noexcept { return w.cols(); }
  std::size_t num_classes() const noexcept { return w.rows(); }

  template <class F>
  void for_each_tensor(F&& f) {
    f("w", w); f("b", b);
  }
  template <class F>
  void for_each_tensor(F&& f) const {
    f("w", w); f("b", b);
  }
};

struct EncoderCache {
  Matrix input, pre, hidden;
};

std::vector<double> encode(const StubEncoder& enc, std::span<const double> input);
/// B×in → B×d. Row i equals encode() of input row i.
Matrix encode_batch(const StubEncoder& enc, const Matrix& inputs, EncoderCache* cache = nullptr);
/// Accumulates into grads; returns dL/dinput.
Matrix encode_backward(const StubEncoder& enc, const EncoderCache& cache, const Matrix& dembed, StubEncoder& grads);

std::vector<double> classify(const ClassifierHead& head, std::span<const double> embedding);
Matrix classify_batch(const ClassifierHead& head, const Matrix& embeddings);
/// Accumulates into grads; returns dL/dembeddings.
Matrix classify_backward(const ClassifierHead& head, const Matrix& embeddings, const Matrix& dlogits,
                         ClassifierHead& grads);

/// Mean over rows of −ln softmax(logits_i)[label_i].
double cross_entropy_loss(const Matrix& logits, std::span<const std::size_t> labels);

struct CrossEntropyGrad {
  double value;
  Matrix dlogits;
};
CrossEntropyGrad cross_entropy_grad(const Matrix& logits, std::span<const std::size_t> labels);

/// Encoder plus its classification head, the unit trained in each phase.
struct ModalityModel {
  StubEncoder encoder;
  ClassifierHead head;

  template <class F>
  void for_each_tensor(F&& f) {
    encoder.for_each_tensor([&](const char* n, Matrix& m) { f((std::string("encoder.") + n).c_str(), m); });
    head.for_each_tensor([&](const char* n, Matrix& m) { f((std::string("head.") + n).c_str(), m); });
  }
  template <class F>
  void for_each_tensor(F&& f) const {
    encoder.for_each_tensor([&](const char* n, const Matrix& m) { f((std::string("encoder.") + n).c_str(), m); });
    head.for_each_tensor([&](const char* n, const Matrix& m) { f((std::string("head.") + n).c_str(), m); });
  }

  friend bool operator==(const ModalityModel& a, const ModalityModel& b);
};

ModalityModel init_modality_model(Modality m, std::size_t input_dim, std::size_t embed_dim, std::size_t num_classes,
                                  std::uint64_t seed);

/// Stacks the modality features of the selected records into a B×D matrix.
Matrix gather_features(const std::vector<FeatureRecord>& records, std::span<const std::size_t> indices, Modality m);
Matrix gather_features(const std::vector<FeatureRecord>& records, Modality m);
std::vector<std::size_t> gather_labels(const std::vector<FeatureRecord>& records, std::span<const std::size_t> indices);
std::vector<std::size_t> gather_labels(const std::vector<FeatureRecord>& records);

std::vector<std::size_t> argmax_rows(const Matrix& logits);

}  // namespace telme
