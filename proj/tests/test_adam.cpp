#include <doctest.h>

#include <cmath>

#include "mi3d/adam.hpp"
#include "mi3d/errors.hpp"
#include "mi3d/ops.hpp"

using namespace mi3d;

namespace {

// Independent scalar Adam, written directly from the update equations.
struct ScalarAdam {
  double lr, b1 = 0.9, b2 = 0.999, eps = 1e-8;
  double m = 0.0, v = 0.0;
  std::uint64_t t = 0;

  double step(double w, double g) {
    ++t;
    m = b1 * m + (1 - b1) * g;
    v = b2 * v + (1 - b2) * g * g;
    const double mh = m / (1 - std::pow(b1, static_cast<double>(t)));
    const double vh = v / (1 - std::pow(b2, static_cast<double>(t)));
    return w - lr * mh / (std::sqrt(vh) + eps);
  }
};

}  // namespace

TEST_SUITE("adam") {

TEST_CASE("zero gradient leaves parameters fixed and advances the step count") {
  std::vector<Tensor> params = {Tensor::from_values({3}, {1.0, -2.0, 0.5}, true)};
  params[0].zero_grad();
  AdamState state = AdamState::init(params, {1e-3, 0.9, 0.999, 1e-8});
  adam_step(params, state);
  adam_step(params, state);
  CHECK(state.step_count == 2);
  CHECK(params[0].values()[0] == 1.0);
  CHECK(params[0].values()[1] == -2.0);
  CHECK(params[0].values()[2] == 0.5);
}

TEST_CASE("first step with unit gradient moves by about -lr") {
  for (double lr : {1e-6, 1e-3}) {
    std::vector<Tensor> params = {Tensor::scalar(0.0, true)};
    params[0].zero_grad();
    params[0].node()->grad[0] = 1.0;
    AdamState state = AdamState::init(params, {lr, 0.9, 0.999, 1e-8});
    adam_step(params, state);
    CHECK(std::abs(params[0].values()[0] + lr) < 1e-9);
  }
}

TEST_CASE("200 steps on (w-3)^2 with lr=0.1 converge within 0.05") {
  std::vector<Tensor> params = {Tensor::scalar(0.0, true)};
  AdamState state = AdamState::init(params, {0.1, 0.9, 0.999, 1e-8});
  ScalarAdam oracle{0.1};
  double w_oracle = 0.0;

  for (int step = 0; step < 200; ++step) {
    Tensor d = add(params[0], Tensor::scalar(-3.0));
    Tensor loss = mul(d, d);
    params[0].zero_grad();
    loss.backward();
    adam_step(params, state);
    w_oracle = oracle.step(w_oracle, 2.0 * (w_oracle - 3.0));
  }
  CHECK(std::abs(params[0].values()[0] - 3.0) < 0.05);
  CHECK(std::abs(w_oracle - 3.0) < 0.05);
  // the tensor path and the scalar oracle walk the same trajectory
  CHECK(params[0].values()[0] == doctest::Approx(w_oracle).epsilon(1e-12));
}

TEST_CASE("shape mismatch raises a dimension error") {
  std::vector<Tensor> params = {Tensor::zeros({3}, true)};
  params[0].zero_grad();
  AdamState state = AdamState::init(params);
  params.push_back(Tensor::zeros({2}, true));
  CHECK_THROWS_AS(adam_step(params, state), DimensionError);
}

}  // TEST_SUITE
