#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "telme/numerics.hpp"

namespace telme {

struct KDConfig {
  double alpha = 1.0;
  double beta = 1.0;
  double tau_response = 4.0;
  double tau_feature = 1.0;

  void validate() const;
};

// Response-based distillation: Pearson distance between temperature-softened
// student and teacher predictions, over batch rows (inter-class relation)
// and over class columns (intra-class relation), each scaled by τ².
double response_loss(const Matrix& student_logits, const Matrix& teacher_logits, double tau);

// Feature-based distillation: KL between the teacher-teacher similarity
// distribution and the student-teacher one, on L2-normalized rows.
double feature_loss(const Matrix& student_reprs, const Matrix& teacher_reprs, double tau);

struct LossGrad {
  double value;
  Matrix grad;  // w.r.t. the student argument only
};

LossGrad response_loss_grad(const Matrix& student_logits, const Matrix& teacher_logits, double tau);
LossGrad feature_loss_grad(const Matrix& student_reprs, const Matrix& teacher_reprs, double tau);

double student_loss(double cls, double resp, double feat, const KDConfig& cfg);

/// One student step's worth of inputs. Teacher tensors are constants: no
/// gradient is ever produced for them.
struct DistillBatch {
  Matrix student_logits;
  const Matrix* teacher_logits = nullptr;
  Matrix student_reprs;
  const Matrix* teacher_reprs = nullptr;
  std::vector<std::size_t> labels;
};

struct StudentObjective {
  double total = 0.0;
  double cls = 0.0;
  double response = 0.0;
  double feature = 0.0;
  Matrix dlogits;
  Matrix dreprs;
};

/// L_cls + α·L_response + β·L_feature with gradients w.r.t. the student's
/// logits and representations. Terms with a zero weight are skipped.
StudentObjective student_objective(const DistillBatch& batch, const KDConfig& cfg);

}  // namespace telme
