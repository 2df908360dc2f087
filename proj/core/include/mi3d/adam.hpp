#pragma once

#include <cstdint>
#include <vector>

#include "mi3d/tensor.hpp"

namespace mi3d {

struct AdamConfig {
  double learning_rate = 1e-6;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

// Per-parameter first/second moment estimates. Moment arrays match the
// parameter shapes exactly; step_count advances by one per adam_step.
struct AdamState {
  AdamConfig config;
  std::uint64_t step_count = 0;
  std::vector<std::vector<double>> first_moment;
  std::vector<std::vector<double>> second_moment;

  static AdamState init(const std::vector<Tensor>& params, AdamConfig config = {});
};

// One bias-corrected Adam update, reading each parameter's accumulated
// gradient and writing the new values in place. Zero gradients leave the
// parameter values fixed points.
void adam_step(std::vector<Tensor>& params, AdamState& state);

}  // namespace mi3d
