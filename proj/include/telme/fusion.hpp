#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "telme/attention.hpp"
#include "telme/encoders.hpp"
#include "telme/numerics.hpp"

namespace telme {

/// Attention-based modality shifting fusion. The teacher embedding is shifted
/// by a gated displacement computed from `tokens` non-verbal embeddings
/// (2 for the full trimodal model, 1 for teacher+one-student pairs).
struct FusionParams {
  std::size_t tokens = 2;
  AttentionParams attn;
  Matrix w1, b1;  // gate:         d × (d + tokens·d), 1×d
  Matrix w2, b2;  // displacement: d × (tokens·d),     1×d
  double theta = 0.1;
  double dropout = 0.1;
  ClassifierHead classifier;

  std::size_t dim() const noexcept { return w1.rows(); }
  void validate() const;

  static FusionParams zeros(std::size_t dim, std::size_t tokens, std::size_t heads, std::size_t num_classes,
                            double theta, double dropout);
  /// Glorot attention/gate/displacement weights; the final classifier starts
  /// from `base_head` when given (so the unshifted model is the teacher).
  static FusionParams init(std::size_t dim, std::size_t tokens, std::size_t heads, std::size_t num_classes,
                           double theta, double dropout, std::uint64_t seed,
                           const ClassifierHead* base_head = nullptr);

  template <class F>
  void for_each_tensor(F&& f) {
    attn.for_each_tensor(f);
    f("w1", w1); f("b1", b1); f("w2", w2); f("b2", b2);
    f("classifier.w", classifier.w); f("classifier.b", classifier.b);
  }
  template <class F>
  void for_each_tensor(F&& f) const {
    attn.for_each_tensor(f);
    f("w1", w1); f("b1", b1); f("w2", w2); f("b2", b2);
    f("classifier.w", classifier.w); f("classifier.b", classifier.b);
  }
};

struct ShiftTrace {
  std::vector<double> attention;     // flattened attended tokens
  std::vector<double> gate;          // g = ReLU(W1·[F_T, F_att] + b1)
  std::vector<double> displacement;  // H = g ⊙ (W2·F_att + b2)
  double lambda = 0.0;
  std::vector<double> fused;         // Z = F_T + λ·H
};

inline constexpr double kDisplacementEpsilon = 1e-12;

/// Stacks the student embeddings as a token sequence, runs multi-head
/// self-attention and flattens the result in token order.
std::vector<double> nonverbal_attend(std::span<const std::span<const double>> students, const FusionParams& params);
std::vector<double> nonverbal_attend(std::span<const double> audio, std::span<const double> visual,
                                     const FusionParams& params);

ShiftTrace shift(std::span<const double> teacher, std::span<const double> attention, const FusionParams& params);

enum class Mode { Eval, Train };

struct FusedOutput {
  std::vector<double> logits;
  ShiftTrace trace;
};

/// attend → shift → dropout (train only) → classifier. `rng` is required in
/// Train mode with a nonzero dropout rate.
FusedOutput fuse_and_classify(std::span<const double> teacher, std::span<const std::span<const double>> students,
                              const FusionParams& params, Mode mode = Mode::Eval, std::mt19937_64* rng = nullptr);
FusedOutput fuse_and_classify(std::span<const double> teacher, std::span<const double> audio,
                              std::span<const double> visual, const FusionParams& params, Mode mode = Mode::Eval,
                              std::mt19937_64* rng = nullptr);

struct FusionSampleCache {
  AttentionCache attn;
  std::vector<double> teacher, attention, gate_in, gate_pre, gate, disp_pre, displacement, fused, dropout_mask;
  double lambda = 0.0;
  double teacher_norm = 0.0;
  double displacement_norm = 0.0;
  bool lambda_saturated = false;
};

struct FusionBatchResult {
  Matrix logits;
  std::vector<ShiftTrace> traces;
  std::vector<FusionSampleCache> caches;
};

/// teacher: B×d; students: one B×d matrix per token.
FusionBatchResult fuse_batch(const Matrix& teacher, const std::vector<Matrix>& students, const FusionParams& params,
                             Mode mode, std::mt19937_64* rng, bool keep_cache);

struct FusionBatchGrads {
  FusionParams params;
  Matrix dteacher;
  std::vector<Matrix> dstudents;
};

FusionBatchGrads fuse_batch_backward(const FusionBatchResult& forward, const FusionParams& params,
                                     const Matrix& dlogits);

}  // namespace telme
