#include "telme/fusion.hpp"

#include <algorithm>
#include <cmath>

#include "telme/error.hpp"
#include "telme/init.hpp"

namespace telme {

void FusionParams::validate() const {
  if (!(theta > 0.0)) fail(ErrorKind::Configuration, "fusion: theta must be > 0");
  if (!(dropout >= 0.0 && dropout < 1.0)) fail(ErrorKind::Configuration, "fusion: dropout must be in [0, 1)");
  if (tokens == 0) fail(ErrorKind::Configuration, "fusion: need at least one non-verbal token");
  const std::size_t d = dim();
  if (attn.dim() != d || w1.cols() != d + tokens * d || b1.cols() != d || w2.rows() != d ||
      w2.cols() != tokens * d || b2.cols() != d || classifier.input_dim() != d)
    fail(ErrorKind::Configuration, "fusion: inconsistent parameter shapes");
}

FusionParams FusionParams::zeros(std::size_t dim, std::size_t tokens, std::size_t heads, std::size_t num_classes,
                                 double theta, double dropout) {
  FusionParams p;
  p.tokens = tokens;
  p.attn = AttentionParams::zeros(dim, heads);
  p.w1 = Matrix(dim, dim + tokens * dim);
  p.b1 = Matrix(1, dim);
  p.w2 = Matrix(dim, tokens * dim);
  p.b2 = Matrix(1, dim);
  p.theta = theta;
  p.dropout = dropout;
  p.classifier = ClassifierHead::zeros(dim, num_classes);
  p.validate();
  return p;
}

FusionParams FusionParams::init(std::size_t dim, std::size_t tokens, std::size_t heads, std::size_t num_classes,
                                double theta, double dropout, std::uint64_t seed, const ClassifierHead* base_head) {
  FusionParams p = zeros(dim, tokens, heads, num_classes, theta, dropout);
  std::mt19937_64 rng(seed);
  p.attn = AttentionParams::glorot(dim, heads, rng);
  glorot_uniform(p.w1, rng);
  glorot_uniform(p.w2, rng);
  if (base_head) {
    if (base_head->input_dim() != dim || base_head->num_classes() != num_classes)
      fail(ErrorKind::Configuration, "fusion: base classifier shape mismatch");
    p.classifier = *base_head;
  } else {
    glorot_uniform(p.classifier.w, rng);
  }
  return p;
}

namespace {

Matrix stack_tokens(std::span<const std::span<const double>> students, std::size_t d) {
  Matrix tokens(students.size(), d);
  for (std::size_t i = 0; i < students.size(); ++i) {
    if (students[i].size() != d)
      fail(ErrorKind::InvalidInput, "fusion: student embedding dim " + std::to_string(students[i].size()) +
                                        " != " + std::to_string(d));
    std::copy(students[i].begin(), students[i].end(), tokens.row(i).begin());
  }
  return tokens;
}

std::vector<double> affine(const Matrix& w, const Matrix& b, std::span<const double> x) {
  std::vector<double> y(w.rows());
  for (std::size_t r = 0; r < w.rows(); ++r) y[r] = dot(w.row(r), x) + b(0, r);
  return y;
}

void shift_into(std::span<const double> teacher, std::span<const double> attention, const FusionParams& params,
                FusionSampleCache& c) {
  const std::size_t d = params.dim();
  if (teacher.size() != d) fail(ErrorKind::InvalidInput, "shift: teacher embedding dim mismatch");
  if (attention.size() != params.tokens * d) fail(ErrorKind::InvalidInput, "shift: attention vector dim mismatch");

  c.teacher.assign(teacher.begin(), teacher.end());
  c.attention.assign(attention.begin(), attention.end());
  c.gate_in = c.teacher;
  c.gate_in.insert(c.gate_in.end(), attention.begin(), attention.end());
  c.gate_pre = affine(params.w1, params.b1, c.gate_in);
  c.gate.resize(d);
  for (std::size_t i = 0; i < d; ++i) c.gate[i] = std::max(0.0, c.gate_pre[i]);
  c.disp_pre = affine(params.w2, params.b2, attention);
  c.displacement.resize(d);
  for (std::size_t i = 0; i < d; ++i) c.displacement[i] = c.gate[i] * c.disp_pre[i];

  c.teacher_norm = l2_norm(teacher);
  c.displacement_norm = l2_norm(c.displacement);
  if (c.displacement_norm < kDisplacementEpsilon) {
    c.lambda = 0.0;
    c.lambda_saturated = true;  // constant, no gradient through λ
  } else {
    const double ratio = c.teacher_norm / c.displacement_norm * params.theta;
    c.lambda_saturated = ratio >= 1.0;
    c.lambda = std::min(ratio, 1.0);
  }
  c.fused.resize(d);
  for (std::size_t i = 0; i < d; ++i) c.fused[i] = teacher[i] + c.lambda * c.displacement[i];
}

ShiftTrace trace_of(const FusionSampleCache& c) {
  return ShiftTrace{c.attention, c.gate, c.displacement, c.lambda, c.fused};
}

}  // namespace

std::vector<double> nonverbal_attend(std::span<const std::span<const double>> students, const FusionParams& params) {
  if (students.size() != params.tokens)
    fail(ErrorKind::InvalidInput, "fusion: expected " + std::to_string(params.tokens) + " student embeddings");
  Matrix out = multi_head_self_attention(stack_tokens(students, params.dim()), params.attn);
  return {out.flat().begin(), out.flat().end()};
}

std::vector<double> nonverbal_attend(std::span<const double> audio, std::span<const double> visual,
                                     const FusionParams& params) {
  const std::span<const double> students[] = {audio, visual};
  return nonverbal_attend(students, params);
}

ShiftTrace shift(std::span<const double> teacher, std::span<const double> attention, const FusionParams& params) {
  FusionSampleCache c;
  shift_into(teacher, attention, params, c);
  return trace_of(c);
}

FusedOutput fuse_and_classify(std::span<const double> teacher, std::span<const std::span<const double>> students,
                              const FusionParams& params, Mode mode, std::mt19937_64* rng) {
  Matrix t(1, teacher.size(), std::vector<double>(teacher.begin(), teacher.end()));
  std::vector<Matrix> s;
  for (auto st : students) s.emplace_back(1, st.size(), std::vector<double>(st.begin(), st.end()));
  auto res = fuse_batch(t, s, params, mode, rng, false);
  return {std::vector<double>(res.logits.flat().begin(), res.logits.flat().end()), std::move(res.traces.front())};
}

FusedOutput fuse_and_classify(std::span<const double> teacher, std::span<const double> audio,
                              std::span<const double> visual, const FusionParams& params, Mode mode,
                              std::mt19937_64* rng) {
  const std::span<const double> students[] = {audio, visual};
  return fuse_and_classify(teacher, students, params, mode, rng);
}

FusionBatchResult fuse_batch(const Matrix& teacher, const std::vector<Matrix>& students, const FusionParams& params,
                             Mode mode, std::mt19937_64* rng, bool keep_cache) {
  params.validate();
  const std::size_t d = params.dim();
  const std::size_t b = teacher.rows();
  if (teacher.cols() != d) fail(ErrorKind::InvalidInput, "fusion: teacher embedding dim mismatch");
  if (students.size() != params.tokens)
    fail(ErrorKind::InvalidInput, "fusion: expected " + std::to_string(params.tokens) + " student matrices");
  for (const auto& s : students)
    if (s.rows() != b || s.cols() != d) fail(ErrorKind::InvalidInput, "fusion: student matrix shape mismatch");
  const bool use_dropout = mode == Mode::Train && params.dropout > 0.0;
  if (use_dropout && !rng) fail(ErrorKind::InvalidInput, "fusion: training-mode dropout needs an rng");
  std::bernoulli_distribution keep(1.0 - params.dropout);
  const double keep_scale = 1.0 / (1.0 - params.dropout);

  FusionBatchResult out;
  out.traces.reserve(b);
  if (keep_cache) out.caches.reserve(b);
  Matrix fused(b, d);
  for (std::size_t i = 0; i < b; ++i) {
    FusionSampleCache c;
    Matrix tokens(params.tokens, d);
    for (std::size_t k = 0; k < params.tokens; ++k)
      std::copy(students[k].row(i).begin(), students[k].row(i).end(), tokens.row(k).begin());
    Matrix attended = multi_head_self_attention(tokens, params.attn, keep_cache ? &c.attn : nullptr);
    shift_into(teacher.row(i), attended.flat(), params, c);
    if (use_dropout) {
      c.dropout_mask.resize(d);
      for (double& m : c.dropout_mask) m = keep(*rng) ? keep_scale : 0.0;
    }
    for (std::size_t k = 0; k < d; ++k)
      fused(i, k) = use_dropout ? c.fused[k] * c.dropout_mask[k] : c.fused[k];
    out.traces.push_back(trace_of(c));
    if (keep_cache) out.caches.push_back(std::move(c));
  }
  out.logits = classify_batch(params.classifier, fused);
  return out;
}

FusionBatchGrads fuse_batch_backward(const FusionBatchResult& forward, const FusionParams& params,
                                     const Matrix& dlogits) {
  const std::size_t d = params.dim();
  const std::size_t b = forward.caches.size();
  if (b != dlogits.rows()) fail(ErrorKind::InvalidInput, "fusion backward: missing forward cache");

  FusionBatchGrads g{FusionParams::zeros(d, params.tokens, params.attn.heads, params.classifier.num_classes(),
                                         params.theta, params.dropout),
                     Matrix(b, d), std::vector<Matrix>(params.tokens, Matrix(b, d))};

  Matrix fused(b, d);
  for (std::size_t i = 0; i < b; ++i) {
    const auto& c = forward.caches[i];
    for (std::size_t k = 0; k < d; ++k) fused(i, k) = c.dropout_mask.empty() ? c.fused[k] : c.fused[k] * c.dropout_mask[k];
  }
  const Matrix dfused_all = classify_backward(params.classifier, fused, dlogits, g.params.classifier);

  for (std::size_t i = 0; i < b; ++i) {
    const auto& c = forward.caches[i];
    std::vector<double> dz(dfused_all.row(i).begin(), dfused_all.row(i).end());
    if (!c.dropout_mask.empty())
      for (std::size_t k = 0; k < d; ++k) dz[k] *= c.dropout_mask[k];

    // Z = F_T + λ·H
    std::vector<double> dteacher = dz;
    std::vector<double> dh(d);
    for (std::size_t k = 0; k < d; ++k) dh[k] = c.lambda * dz[k];
    if (!c.lambda_saturated) {
      // λ = θ·‖F_T‖/‖H‖
      const double dlambda = dot(dz, c.displacement);
      if (c.teacher_norm > 0.0) {
        const double coeff = dlambda * params.theta / (c.displacement_norm * c.teacher_norm);
        for (std::size_t k = 0; k < d; ++k) dteacher[k] += coeff * c.teacher[k];
      }
      const double coeff_h = -dlambda * c.lambda / (c.displacement_norm * c.displacement_norm);
      for (std::size_t k = 0; k < d; ++k) dh[k] += coeff_h * c.displacement[k];
    }

    // H = g ⊙ (W2·F_att + b2)
    std::vector<double> dgate_pre(d), ddisp_pre(d);
    for (std::size_t k = 0; k < d; ++k) {
      ddisp_pre[k] = dh[k] * c.gate[k];
      dgate_pre[k] = c.gate_pre[k] > 0.0 ? dh[k] * c.disp_pre[k] : 0.0;
    }
    std::vector<double> dattention(params.tokens * d, 0.0);
    for (std::size_t r = 0; r < d; ++r) {
      g.params.b2(0, r) += ddisp_pre[r];
      g.params.b1(0, r) += dgate_pre[r];
      for (std::size_t k = 0; k < c.attention.size(); ++k) {
        g.params.w2(r, k) += ddisp_pre[r] * c.attention[k];
        dattention[k] += params.w2(r, k) * ddisp_pre[r];
      }
      for (std::size_t k = 0; k < c.gate_in.size(); ++k) {
        g.params.w1(r, k) += dgate_pre[r] * c.gate_in[k];
        const double din = params.w1(r, k) * dgate_pre[r];
        if (k < d) dteacher[k] += din;
        else dattention[k - d] += din;
      }
    }

    Matrix datt(params.tokens, d, std::move(dattention));
    Matrix dtokens = multi_head_self_attention_backward(c.attn, params.attn, datt, g.params.attn);
    std::copy(dteacher.begin(), dteacher.end(), g.dteacher.row(i).begin());
    for (std::size_t t = 0; t < params.tokens; ++t)
      std::copy(dtokens.row(t).begin(), dtokens.row(t).end(), g.dstudents[t].row(i).begin());
  }
  return g;
}

}  // namespace telme
