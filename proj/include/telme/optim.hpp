#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "telme/numerics.hpp"

namespace telme {

struct AdamWConfig {
  double weight_decay = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Linear warmup to `peak` over round(warmup_fraction·total) steps, then
/// linear decay to zero at `total`.
class LinearWarmupSchedule {
 public:
  LinearWarmupSchedule(double peak, double warmup_fraction, std::size_t total_steps);
  double lr_at(std::size_t step) const;
  std::size_t warmup_steps() const noexcept { return warmup_; }
  std::size_t total_steps() const noexcept { return total_; }

 private:
  double peak_;
  std::size_t warmup_;
  std::size_t total_;
};

struct OptimizerState {
  std::vector<Matrix> first_moment;
  std::vector<Matrix> second_moment;
  std::size_t step = 0;

  bool empty() const noexcept { return step == 0 && first_moment.empty(); }
};

/// One AdamW update with decoupled weight decay (decay applied to the
/// parameter before the adaptive step). Moments are created on first use.
void optimizer_step(const std::vector<Matrix*>& params, const std::vector<const Matrix*>& grads,
                    OptimizerState& state, double lr, const AdamWConfig& cfg);

template <class T>
std::vector<Matrix*> tensor_ptrs(T& obj) {
  std::vector<Matrix*> out;
  obj.for_each_tensor([&](const char*, Matrix& m) { out.push_back(&m); });
  return out;
}

template <class T>
std::vector<const Matrix*> tensor_ptrs(const T& obj) {
  std::vector<const Matrix*> out;
  obj.for_each_tensor([&](const char*, const Matrix& m) { out.push_back(&m); });
  return out;
}

/// Copies of obj with all tensors zeroed (gradient accumulators).
template <class T>
T zeros_like(const T& obj) {
  T z = obj;
  z.for_each_tensor([](const char*, Matrix& m) { m.fill(0.0); });
  return z;
}

}  // namespace telme
