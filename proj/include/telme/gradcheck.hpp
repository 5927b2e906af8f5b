#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "telme/numerics.hpp"

namespace telme {

enum class LossId { CrossEntropy, ResponseLoss, FeatureLoss, FusedForward };

LossId parse_loss_id(const std::string& s);
const char* to_string(LossId id);

using DifferentiableFn = std::function<DualValue(std::span<const double>)>;

struct GradientCheckResult {
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
};

/// Central differences at every coordinate; relative error uses the
/// denominator max(|analytic|, |numeric|, 1e-8).
GradientCheckResult check_gradient(const DifferentiableFn& fn, std::span<const double> point, double step = 1e-6);

/// A seeded random problem for `id` wrapped as a function of its
/// differentiable parameters, plus the starting point.
struct GradientProblem {
  DifferentiableFn fn;
  std::vector<double> point;
};

GradientProblem make_gradient_problem(LossId id, std::uint64_t seed);

/// Max relative error of the analytic gradient for `id` on the seeded problem.
double gradient_check(LossId id, std::uint64_t seed);

}  // namespace telme
