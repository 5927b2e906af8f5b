#include "telme/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "telme/distillation.hpp"
#include "telme/encoders.hpp"
#include "telme/error.hpp"
#include "telme/fusion.hpp"
#include "telme/init.hpp"
#include "telme/optim.hpp"

namespace telme {

LossId parse_loss_id(const std::string& s) {
  if (s == "cross_entropy") return LossId::CrossEntropy;
  if (s == "response_loss") return LossId::ResponseLoss;
  if (s == "feature_loss") return LossId::FeatureLoss;
  if (s == "fused_forward" || s == "fuse_and_classify") return LossId::FusedForward;
  fail(ErrorKind::Configuration, "unknown loss id '" + s +
                                     "' (expected cross_entropy, response_loss, feature_loss, fused_forward)");
}

const char* to_string(LossId id) {
  switch (id) {
    case LossId::CrossEntropy: return "cross_entropy";
    case LossId::ResponseLoss: return "response_loss";
    case LossId::FeatureLoss: return "feature_loss";
    case LossId::FusedForward: return "fused_forward";
  }
  return "?";
}

GradientCheckResult check_gradient(const DifferentiableFn& fn, std::span<const double> point, double step) {
  std::vector<double> x(point.begin(), point.end());
  const DualValue base = fn(x);
  GradientCheckResult r;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = x[i];
    x[i] = orig + step;
    const double up = fn(x).value;
    x[i] = orig - step;
    const double down = fn(x).value;
    x[i] = orig;
    const double numeric = (up - down) / (2.0 * step);
    const double analytic = base.gradient[i];
    const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
    const double rel = std::abs(analytic - numeric) / denom;
    if (i == 0 || rel > r.max_rel_error) r = {rel, i, analytic, numeric};
  }
  return r;
}

namespace {

Matrix random_matrix(std::size_t rows, std::size_t cols, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  Matrix m(rows, cols);
  for (double& v : m.flat()) v = n(rng);
  return m;
}

Matrix view(std::span<const double> x, std::size_t rows, std::size_t cols) {
  return Matrix(rows, cols, std::vector<double>(x.begin(), x.end()));
}

std::vector<double> flat(const Matrix& m) { return {m.flat().begin(), m.flat().end()}; }

GradientProblem cross_entropy_problem(std::mt19937_64& rng) {
  const std::size_t b = 5, c = 4;
  std::uniform_int_distribution<std::size_t> label(0, c - 1);
  std::vector<std::size_t> y(b);
  for (auto& v : y) v = label(rng);
  return {[=](std::span<const double> x) {
            auto g = cross_entropy_grad(view(x, b, c), y);
            return DualValue(g.value, flat(g.dlogits), x.size());
          },
          flat(random_matrix(b, c, rng, 1.5))};
}

GradientProblem response_problem(std::mt19937_64& rng) {
  const std::size_t b = 6, c = 4;
  const Matrix teacher = random_matrix(b, c, rng, 2.0);
  std::uniform_real_distribution<double> tau_dist(1.0, 4.0);
  const double tau = tau_dist(rng);
  return {[=](std::span<const double> x) {
            auto g = response_loss_grad(view(x, b, c), teacher, tau);
            return DualValue(g.value, flat(g.grad), x.size());
          },
          flat(random_matrix(b, c, rng, 2.0))};
}

GradientProblem feature_problem(std::mt19937_64& rng) {
  const std::size_t b = 6, d = 5;
  const Matrix teacher = random_matrix(b, d, rng);
  std::uniform_real_distribution<double> tau_dist(0.5, 2.0);
  const double tau = tau_dist(rng);
  return {[=](std::span<const double> x) {
            auto g = feature_loss_grad(view(x, b, d), teacher, tau);
            return DualValue(g.value, flat(g.grad), x.size());
          },
          flat(random_matrix(b, d, rng))};
}

// Parameters: every fusion tensor followed by the teacher and both student
// embedding matrices. Loss: cross-entropy of the fused logits, dropout off.
GradientProblem fused_problem(std::mt19937_64& rng) {
  const std::size_t b = 3, d = 4, c = 3, heads = 2;
  std::uniform_real_distribution<double> theta_dist(0.3, 1.2);
  FusionParams params = FusionParams::init(d, 2, heads, c, theta_dist(rng), 0.0, rng());
  for (Matrix* bias : {&params.b1, &params.b2, &params.attn.bq, &params.attn.bv, &params.attn.bo,
                       &params.classifier.b})
    *bias = random_matrix(1, bias->cols(), rng, 0.3);
  glorot_uniform(params.classifier.w, rng);
  std::uniform_int_distribution<std::size_t> label(0, c - 1);
  std::vector<std::size_t> y(b);
  for (auto& v : y) v = label(rng);

  std::vector<double> point;
  for (const Matrix* m : tensor_ptrs(std::as_const(params))) point.insert(point.end(), m->flat().begin(), m->flat().end());
  for (int k = 0; k < 3; ++k) {
    auto e = flat(random_matrix(b, d, rng));
    point.insert(point.end(), e.begin(), e.end());
  }

  return {[=](std::span<const double> x) {
            FusionParams p = params;
            std::size_t off = 0;
            for (Matrix* m : tensor_ptrs(p)) {
              std::copy(x.begin() + off, x.begin() + off + m->size(), m->flat().begin());
              off += m->size();
            }
            const std::size_t param_count = off;
            std::vector<Matrix> inputs;
            for (int k = 0; k < 3; ++k, off += b * d) inputs.push_back(view(x.subspan(off, b * d), b, d));
            const std::vector<Matrix> students = {inputs[1], inputs[2]};

            auto fwd = fuse_batch(inputs[0], students, p, Mode::Eval, nullptr, true);
            auto ce = cross_entropy_grad(fwd.logits, y);
            auto g = fuse_batch_backward(fwd, p, ce.dlogits);
            std::vector<double> grad;
            grad.reserve(x.size());
            for (const Matrix* m : tensor_ptrs(std::as_const(g.params)))
              grad.insert(grad.end(), m->flat().begin(), m->flat().end());
            if (grad.size() != param_count) fail(ErrorKind::InvalidInput, "fused gradient layout mismatch");
            for (const Matrix* m : {&g.dteacher, &g.dstudents[0], &g.dstudents[1]})
              grad.insert(grad.end(), m->flat().begin(), m->flat().end());
            return DualValue(ce.value, std::move(grad), x.size());
          },
          std::move(point)};
}

}  // namespace

GradientProblem make_gradient_problem(LossId id, std::uint64_t seed) {
  std::mt19937_64 rng(derive_seed(seed, std::string("gradcheck:") + to_string(id)));
  switch (id) {
    case LossId::CrossEntropy: return cross_entropy_problem(rng);
    case LossId::ResponseLoss: return response_problem(rng);
    case LossId::FeatureLoss: return feature_problem(rng);
    case LossId::FusedForward: return fused_problem(rng);
  }
  fail(ErrorKind::Configuration, "unknown loss id");
}

double gradient_check(LossId id, std::uint64_t seed) {
  auto problem = make_gradient_problem(id, seed);
  return check_gradient(problem.fn, problem.point, 1e-6).max_rel_error;
}

}  // namespace telme
