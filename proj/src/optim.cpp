#include "telme/optim.hpp"

#include <cmath>

#include "telme/error.hpp"

namespace telme {

LinearWarmupSchedule::LinearWarmupSchedule(double peak, double warmup_fraction, std::size_t total_steps)
    : peak_(peak), total_(total_steps) {
  if (!(warmup_fraction >= 0.0 && warmup_fraction <= 1.0))
    fail(ErrorKind::Configuration, "warmup fraction must be in [0, 1]");
  warmup_ = static_cast<std::size_t>(std::llround(warmup_fraction * static_cast<double>(total_steps)));
}

double LinearWarmupSchedule::lr_at(std::size_t step) const {
  if (step < warmup_) return peak_ * static_cast<double>(step) / static_cast<double>(warmup_);
  if (step >= total_) return 0.0;
  return peak_ * static_cast<double>(total_ - step) / static_cast<double>(total_ - warmup_);
}

void optimizer_step(const std::vector<Matrix*>& params, const std::vector<const Matrix*>& grads,
                    OptimizerState& state, double lr, const AdamWConfig& cfg) {
  if (params.size() != grads.size()) fail(ErrorKind::InvalidInput, "optimizer: parameter/gradient count mismatch");
  if (state.first_moment.empty()) {
    for (const Matrix* p : params) {
      state.first_moment.emplace_back(p->rows(), p->cols());
      state.second_moment.emplace_back(p->rows(), p->cols());
    }
  }
  if (state.first_moment.size() != params.size())
    fail(ErrorKind::InvalidInput, "optimizer: state does not match parameter list");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!params[i]->same_shape(*grads[i]) || !params[i]->same_shape(state.first_moment[i]))
      fail(ErrorKind::InvalidInput, "optimizer: shape mismatch at tensor " + std::to_string(i) + " (" +
                                        params[i]->shape_string() + " vs " + grads[i]->shape_string() + ")");
  }

  ++state.step;
  const double t = static_cast<double>(state.step);
  const double bias1 = 1.0 - std::pow(cfg.beta1, t);
  const double bias2 = 1.0 - std::pow(cfg.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto p = params[i]->flat();
    auto g = grads[i]->flat();
    auto m = state.first_moment[i].flat();
    auto v = state.second_moment[i].flat();
    for (std::size_t k = 0; k < p.size(); ++k) {
      p[k] -= lr * cfg.weight_decay * p[k];
      m[k] = cfg.beta1 * m[k] + (1.0 - cfg.beta1) * g[k];
      v[k] = cfg.beta2 * v[k] + (1.0 - cfg.beta2) * g[k] * g[k];
      p[k] -= lr * (m[k] / bias1) / (std::sqrt(v[k] / bias2) + cfg.eps);
    }
  }
}

}  // namespace telme
