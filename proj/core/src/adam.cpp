#include "mi3d/adam.hpp"

#include <cmath>

#include "mi3d/errors.hpp"

namespace mi3d {

AdamState AdamState::init(const std::vector<Tensor>& params, AdamConfig config) {
  AdamState state;
  state.config = config;
  state.first_moment.reserve(params.size());
  state.second_moment.reserve(params.size());
  for (const auto& p : params) {
    state.first_moment.emplace_back(p.size(), 0.0);
    state.second_moment.emplace_back(p.size(), 0.0);
  }
  return state;
}

void adam_step(std::vector<Tensor>& params, AdamState& state) {
  if (params.size() != state.first_moment.size()) {
    throw DimensionError("adam_step: state tracks " + std::to_string(state.first_moment.size()) +
                         " parameters, got " + std::to_string(params.size()));
  }
  const double b1 = state.config.beta1;
  const double b2 = state.config.beta2;
  state.step_count += 1;
  const double bias1 = 1.0 - std::pow(b1, static_cast<double>(state.step_count));
  const double bias2 = 1.0 - std::pow(b2, static_cast<double>(state.step_count));

  for (std::size_t k = 0; k < params.size(); ++k) {
    auto& m = state.first_moment[k];
    auto& v = state.second_moment[k];
    if (m.size() != params[k].size()) {
      throw DimensionError("adam_step: moment size " + std::to_string(m.size()) +
                           " does not match parameter shape " +
                           shape_to_string(params[k].shape()));
    }
    auto g = params[k].grad();
    auto w = params[k].mutable_values();
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = b1 * m[i] + (1.0 - b1) * g[i];
      v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
      const double m_hat = m[i] / bias1;
      const double v_hat = v[i] / bias2;
      w[i] -= state.config.learning_rate * m_hat / (std::sqrt(v_hat) + state.config.epsilon);
    }
  }
}

}  // namespace mi3d
