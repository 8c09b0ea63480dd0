// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The SimCR Authors

#include <cmath>

#include "doctest.h"
#include "simcr/optim.hpp"

using namespace simcr;
using ad::Tensor;

namespace {

// Scalar Adam written out by hand.
struct ScalarAdam {
  double m = 0.0, v = 0.0;
  int t = 0;
  double step(double w, double g, double lr) {
    ++t;
    m = 0.9 * m + 0.1 * g;
    v = 0.98 * v + 0.02 * g * g;
    const double mh = m / (1.0 - std::pow(0.9, t));
    const double vh = v / (1.0 - std::pow(0.98, t));
    return w - lr * mh / (std::sqrt(vh) + 1e-8);
  }
};

}  // namespace

TEST_CASE("first Adam step with unit gradient moves by lr") {
  std::vector<Tensor> params{Tensor::from({1}, {1.0}, true)};
  params[0].mutable_grad()[0] = 1.0;
  AdamState state = AdamState::for_params(params);
  adam_step(params, state, 0.1);
  CHECK(params[0].at(0) == doctest::Approx(0.9).epsilon(1e-9));
  CHECK(state.step_count == 1);
}

TEST_CASE("zero gradient leaves parameters but counts the step") {
  std::vector<Tensor> params{Tensor::from({2}, {1.0, -2.0}, true)};
  AdamState state = AdamState::for_params(params);
  adam_step(params, state, 0.1);
  adam_step(params, state, 0.1);
  CHECK(params[0].at(0) == 1.0);
  CHECK(params[0].at(1) == -2.0);
  CHECK(state.step_count == 2);
}

TEST_CASE("lr = 0 is a no-op on parameters") {
  std::vector<Tensor> params{Tensor::from({2}, {0.5, 0.25}, true)};
  params[0].mutable_grad()[0] = 3.0;
  params[0].mutable_grad()[1] = -1.0;
  AdamState state = AdamState::for_params(params);
  adam_step(params, state, 0.0);
  CHECK(params[0].at(0) == 0.5);
  CHECK(params[0].at(1) == 0.25);
}

TEST_CASE("Adam on a 1-D quadratic tracks the scalar simulation and converges") {
  std::vector<Tensor> params{Tensor::from({1}, {1.0}, true)};
  AdamState state = AdamState::for_params(params);
  ScalarAdam oracle;
  double w = 1.0;
  for (int i = 0; i < 500; ++i) {
    params[0].zero_grad();
    params[0].mutable_grad()[0] = params[0].at(0);  // d(w^2/2)/dw
    adam_step(params, state, 0.1);
    w = oracle.step(w, w, 0.1);
    REQUIRE(params[0].at(0) == doctest::Approx(w).epsilon(1e-12));
  }
  CHECK(std::abs(params[0].at(0)) < 1e-3);
}

TEST_CASE("Adam rejects mismatched state") {
  std::vector<Tensor> params{Tensor::from({2}, {0.0, 0.0}, true)};
  std::vector<Tensor> other{Tensor::from({3}, {0.0, 0.0, 0.0}, true)};
  AdamState state = AdamState::for_params(other);
  CHECK_THROWS(adam_step(params, state, 0.1));
}

TEST_CASE("inverse square root schedule") {
  CHECK(lr_inverse_sqrt(400, 400, 1e-3) == doctest::Approx(1e-3).epsilon(1e-15));
  CHECK(lr_inverse_sqrt(32000, 8000, 1e-3) == doctest::Approx(5e-4).epsilon(1e-15));
  CHECK(lr_inverse_sqrt(200, 400, 1e-3) == doctest::Approx(5e-4).epsilon(1e-15));
  CHECK(lr_inverse_sqrt(1, 400, 1e-3) == doctest::Approx(1e-3 / 400).epsilon(1e-15));
  // Continuous and peaked at the warmup boundary.
  CHECK(lr_inverse_sqrt(401, 400, 1e-3) < 1e-3);
  CHECK(lr_inverse_sqrt(401, 400, 1e-3) == doctest::Approx(1e-3).epsilon(2e-3));
}
