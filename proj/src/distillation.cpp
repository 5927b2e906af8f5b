#include "telme/distillation.hpp"

#include <cmath>

#include "telme/encoders.hpp"
#include "telme/error.hpp"

namespace telme {

void KDConfig::validate() const {
  if (!(alpha >= 0.0) || !(beta >= 0.0)) fail(ErrorKind::Configuration, "kd: alpha and beta must be >= 0");
  if (!(tau_response > 0.0) || !(tau_feature > 0.0)) fail(ErrorKind::Configuration, "kd: temperatures must be > 0");
}

namespace {

void check_response_args(const Matrix& zs, const Matrix& zt) {
  if (!zs.same_shape(zt))
    fail(ErrorKind::InvalidInput, "response_loss: shape mismatch " + zs.shape_string() + " vs " + zt.shape_string());
  if (zs.rows() < 2 || zs.cols() < 2)
    fail(ErrorKind::InvalidInput, "response_loss: need B >= 2 and C >= 2, got " + zs.shape_string());
}

}  // namespace

LossGrad response_loss_grad(const Matrix& zs, const Matrix& zt, double tau) {
  check_response_args(zs, zt);
  const std::size_t b = zs.rows();
  const std::size_t c = zs.cols();
  const Matrix ys = softmax_rows(zs, tau);
  const Matrix yt = softmax_rows(zt, tau);
  const double inter_scale = tau * tau / static_cast<double>(b);
  const double intra_scale = tau * tau / static_cast<double>(c);

  Matrix dys(b, c);
  double inter = 0.0;
  for (std::size_t i = 0; i < b; ++i) {
    auto pg = pearson_distance_grad(ys.row(i), yt.row(i));
    inter += pg.value;
    for (std::size_t j = 0; j < c; ++j) dys(i, j) += inter_scale * pg.du[j];
  }
  double intra = 0.0;
  for (std::size_t j = 0; j < c; ++j) {
    auto pg = pearson_distance_grad(ys.column(j), yt.column(j));
    intra += pg.value;
    for (std::size_t i = 0; i < b; ++i) dys(i, j) += intra_scale * pg.du[i];
  }

  LossGrad out{inter_scale * inter + intra_scale * intra, Matrix(b, c)};
  for (std::size_t i = 0; i < b; ++i) {
    auto dz = softmax_temp_backward(ys.row(i), dys.row(i), tau);
    std::copy(dz.begin(), dz.end(), out.grad.row(i).begin());
  }
  return out;
}

double response_loss(const Matrix& zs, const Matrix& zt, double tau) {
  check_response_args(zs, zt);
  const Matrix ys = softmax_rows(zs, tau);
  const Matrix yt = softmax_rows(zt, tau);
  double inter = 0.0;
  for (std::size_t i = 0; i < ys.rows(); ++i) inter += pearson_distance(ys.row(i), yt.row(i));
  double intra = 0.0;
  for (std::size_t j = 0; j < ys.cols(); ++j) intra += pearson_distance(ys.column(j), yt.column(j));
  return tau * tau / static_cast<double>(ys.rows()) * inter + tau * tau / static_cast<double>(ys.cols()) * intra;
}

namespace {

struct Normalized {
  Matrix unit;
  std::vector<double> norms;
};

Normalized normalize_rows(const Matrix& f, const char* which) {
  Normalized n{f, std::vector<double>(f.rows())};
  for (std::size_t i = 0; i < f.rows(); ++i) {
    const double norm = l2_norm(f.row(i));
    if (!(norm > 1e-12))
      fail(ErrorKind::DegenerateRepresentation,
           std::string("feature_loss: ") + which + " representation row " + std::to_string(i) + " has zero norm");
    n.norms[i] = norm;
    for (double& v : n.unit.row(i)) v /= norm;
  }
  return n;
}

void check_feature_args(const Matrix& fs, const Matrix& ft) {
  if (!fs.same_shape(ft))
    fail(ErrorKind::InvalidInput, "feature_loss: shape mismatch " + fs.shape_string() + " vs " + ft.shape_string());
  if (fs.rows() < 2) fail(ErrorKind::InvalidInput, "feature_loss: need B >= 2");
}

}  // namespace

LossGrad feature_loss_grad(const Matrix& fs, const Matrix& ft, double tau) {
  check_feature_args(fs, ft);
  const std::size_t b = fs.rows();
  const Normalized s = normalize_rows(fs, "student");
  const Normalized t = normalize_rows(ft, "teacher");

  const Matrix target = softmax_rows(matmul_transposed(t.unit, t.unit), tau);  // P
  const Matrix q = softmax_rows(matmul_transposed(s.unit, t.unit), tau);       // Q

  const double inv_b = 1.0 / static_cast<double>(b);
  double total = 0.0;
  Matrix dsim(b, b);
  for (std::size_t i = 0; i < b; ++i) {
    total += kl_divergence(target.row(i), q.row(i));
    auto dq = kl_divergence_grad_q(target.row(i), q.row(i));
    for (double& v : dq) v *= inv_b;
    auto dm = softmax_temp_backward(q.row(i), dq, tau);
    std::copy(dm.begin(), dm.end(), dsim.row(i).begin());
  }

  // M' = Ŝ·T̂ᵀ  ⇒  dŜ = dM'·T̂, then back through the row normalization.
  const Matrix dunit = matmul(dsim, t.unit);
  LossGrad out{total * inv_b, Matrix(b, fs.cols())};
  for (std::size_t i = 0; i < b; ++i) {
    const double proj = dot(dunit.row(i), s.unit.row(i));
    for (std::size_t k = 0; k < fs.cols(); ++k)
      out.grad(i, k) = (dunit(i, k) - proj * s.unit(i, k)) / s.norms[i];
  }
  return out;
}

double feature_loss(const Matrix& fs, const Matrix& ft, double tau) {
  check_feature_args(fs, ft);
  const Normalized s = normalize_rows(fs, "student");
  const Normalized t = normalize_rows(ft, "teacher");
  const Matrix target = softmax_rows(matmul_transposed(t.unit, t.unit), tau);
  const Matrix q = softmax_rows(matmul_transposed(s.unit, t.unit), tau);
  double total = 0.0;
  for (std::size_t i = 0; i < fs.rows(); ++i) total += kl_divergence(target.row(i), q.row(i));
  return total / static_cast<double>(fs.rows());
}

double student_loss(double cls, double resp, double feat, const KDConfig& cfg) {
  return cls + cfg.alpha * resp + cfg.beta * feat;
}

StudentObjective student_objective(const DistillBatch& batch, const KDConfig& cfg) {
  StudentObjective out;
  auto ce = cross_entropy_grad(batch.student_logits, batch.labels);
  out.cls = ce.value;
  out.dlogits = std::move(ce.dlogits);
  out.dreprs = Matrix(batch.student_reprs.rows(), batch.student_reprs.cols());

  if (cfg.alpha > 0.0) {
    if (!batch.teacher_logits) fail(ErrorKind::Dependency, "student_objective: response loss needs teacher logits");
    auto r = response_loss_grad(batch.student_logits, *batch.teacher_logits, cfg.tau_response);
    out.response = r.value;
    add_inplace(out.dlogits, r.grad, cfg.alpha);
  }
  if (cfg.beta > 0.0) {
    if (!batch.teacher_reprs) fail(ErrorKind::Dependency, "student_objective: feature loss needs teacher reprs");
    auto f = feature_loss_grad(batch.student_reprs, *batch.teacher_reprs, cfg.tau_feature);
    out.feature = f.value;
    add_inplace(out.dreprs, f.grad, cfg.beta);
  }
  out.total = student_loss(out.cls, out.response, out.feature, cfg);
  return out;
}

}  // namespace telme
