// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The SimCR Authors

#include <cmath>
#include <numbers>

#include "doctest.h"
#include "simcr/autodiff.hpp"
#include "support.hpp"

using namespace simcr;
using namespace simcr::ad;
using simcr::testing::grad_check;
using simcr::testing::Probe;
using simcr::testing::random_tensor;

namespace {

constexpr double kTol = 1e-4;

// Probe-weighted unary op, checked at a random point.
double check_unary(const Shape& shape, std::uint64_t seed,
                   const std::function<Tensor(const Tensor&)>& op) {
  Rng rng(seed);
  Tensor x = random_tensor(shape, rng);
  const Tensor probe_shape = op(detach(x));
  Probe probe(probe_shape.shape(), seed + 1);
  return grad_check({x}, [&](const std::vector<Tensor>& in) { return probe(op(in[0])); });
}

double check_binary(const Shape& a_shape, const Shape& b_shape, std::uint64_t seed,
                    const std::function<Tensor(const Tensor&, const Tensor&)>& op) {
  Rng rng(seed);
  Tensor a = random_tensor(a_shape, rng);
  Tensor b = random_tensor(b_shape, rng);
  Probe probe(op(detach(a), detach(b)).shape(), seed + 1);
  return grad_check({a, b},
                    [&](const std::vector<Tensor>& in) { return probe(op(in[0], in[1])); });
}

}  // namespace

TEST_CASE("log_softmax of equal logits is -ln 2") {
  const Tensor y = log_softmax(Tensor::from({2}, {0.0, 0.0}), 0);
  CHECK(y.at(0) == doctest::Approx(-std::numbers::ln2).epsilon(1e-15));
  CHECK(y.at(1) == doctest::Approx(-std::numbers::ln2).epsilon(1e-15));
}

TEST_CASE("conv1d output length, kernel 5 stride 2 padding 2") {
  const Conv1dSpec spec{2, 2};
  CHECK(conv1d_out_len(100, 5, spec) == 50);
  CHECK(conv1d_out_len(50, 5, spec) == 25);
  CHECK(conv1d_out_len(5, 5, spec) == 3);
  CHECK(conv1d_out_len(3, 5, spec) == 2);

  Rng rng(1);
  const Tensor x = random_tensor({100, 3}, rng, false);
  const Tensor w1 = random_tensor({4, 3, 5}, rng, false);
  const Tensor w2 = random_tensor({4, 4, 5}, rng, false);
  const Tensor b = Tensor::zeros({4});
  const Tensor h = conv1d(x, w1, b, spec);
  CHECK(h.shape() == Shape{50, 4});
  CHECK(conv1d(h, w2, b, spec).shape() == Shape{25, 4});
}

TEST_CASE("softmax rows sum to one") {
  Rng rng(2);
  const Tensor x = random_tensor({5, 7}, rng, false, 3.0);
  const Tensor p = softmax(x, 1);
  const Tensor q = exp(log_softmax(x, 1));
  for (std::size_t r = 0; r < 5; ++r) {
    double sp = 0.0, sq = 0.0;
    for (std::size_t c = 0; c < 7; ++c) {
      sp += p.at(r * 7 + c);
      sq += q.at(r * 7 + c);
    }
    CHECK(std::abs(sp - 1.0) < 1e-9);
    CHECK(std::abs(sq - 1.0) < 1e-9);
  }
  const Tensor pc = softmax(x, 0);
  for (std::size_t c = 0; c < 7; ++c) {
    double s = 0.0;
    for (std::size_t r = 0; r < 5; ++r) s += pc.at(r * 7 + c);
    CHECK(std::abs(s - 1.0) < 1e-9);
  }
}

TEST_CASE("backward of sum(x*x)") {
  Tensor x = Tensor::from({3}, {1.0, 2.0, 3.0}, true);
  const Tensor root = reduce_sum(multiply(x, x));
  root.backward();
  CHECK(x.grad() == std::vector<double>{2.0, 4.0, 6.0});

  SUBCASE("gradients accumulate until cleared") {
    root.backward();
    CHECK(x.grad() == std::vector<double>{4.0, 8.0, 12.0});
    x.zero_grad();
    CHECK(x.grad() == std::vector<double>{0.0, 0.0, 0.0});
  }
}

TEST_CASE("backward needs a scalar root") {
  Tensor x = Tensor::from({2}, {1.0, 2.0}, true);
  CHECK_THROWS_AS(scale(x, 2.0).backward(), ShapeError);
}

TEST_CASE("shape errors name the operator and shapes") {
  const Tensor a = Tensor::zeros({2, 3});
  const Tensor b = Tensor::zeros({4, 5});
  try {
    (void)matmul(a, b);
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("matmul") != std::string::npos);
    CHECK(msg.find("[2x3]") != std::string::npos);
    CHECK(msg.find("[4x5]") != std::string::npos);
  }
  CHECK_THROWS_AS(add(a, b), ShapeError);
  CHECK_THROWS_AS(reshape(a, {5}), ShapeError);
  CHECK_THROWS_AS(slice(a, 1, 2, 5), ShapeError);
}

TEST_CASE("non-finite results raise NumericalError") {
  CHECK_THROWS_AS(exp(Tensor::from({1}, {1000.0})), NumericalError);
  CHECK_THROWS_AS(scale(Tensor::from({1}, {1e308}), 10.0), NumericalError);
}

TEST_CASE("no graph is recorded under NoGradGuard") {
  Tensor x = Tensor::from({2}, {1.0, 2.0}, true);
  {
    NoGradGuard guard;
    CHECK_FALSE(grad_enabled());
    const Tensor y = reduce_sum(multiply(x, x));
    CHECK_FALSE(y.requires_grad());
  }
  CHECK(grad_enabled());
  CHECK(reduce_sum(x).requires_grad());
}

TEST_CASE("dropout") {
  const Tensor ones = Tensor::full({1000}, 1.0);
  SUBCASE("p = 0 is the identity") {
    Rng rng(1);
    const Tensor y = dropout(ones, 0.0, rng);
    CHECK(std::equal(y.data().begin(), y.data().end(), ones.data().begin()));
  }
  SUBCASE("same seed, same mask") {
    Rng r1(9), r2(9);
    const Tensor a = dropout(ones, 0.3, r1);
    const Tensor b = dropout(ones, 0.3, r2);
    CHECK(std::equal(a.data().begin(), a.data().end(), b.data().begin()));
  }
  SUBCASE("survivors are scaled by 1/(1-p)") {
    Rng rng(4);
    const Tensor y = dropout(ones, 0.25, rng);
    for (double v : y.data()) CHECK((v == 0.0 || std::abs(v - 1.0 / 0.75) < 1e-15));
  }
  SUBCASE("unbiased in expectation") {
    Rng rng(5);
    const Tensor big = Tensor::full({100000}, 1.0);
    const Tensor y = dropout(big, 0.1, rng);
    double mean = 0.0;
    for (double v : y.data()) mean += v;
    mean /= 100000.0;
    CHECK(std::abs(mean - 1.0) < 0.01);
  }
  SUBCASE("p >= 1 is rejected") {
    Rng rng(1);
    CHECK_THROWS(dropout(ones, 1.0, rng));
  }
}

TEST_CASE("gradients match central differences for every primitive") {
  SUBCASE("matmul 2-D") {
    CHECK(check_binary({3, 4}, {4, 5}, 11, [](auto& a, auto& b) { return matmul(a, b); }) <
          1e-6);
  }
  SUBCASE("matmul with leading dims") {
    CHECK(check_binary({2, 3, 4}, {4, 2}, 12, [](auto& a, auto& b) { return matmul(a, b); }) <
          kTol);
  }
  SUBCASE("batched matmul") {
    CHECK(check_binary({2, 3, 4}, {2, 4, 3}, 13,
                       [](auto& a, auto& b) { return matmul(a, b); }) < kTol);
  }
  SUBCASE("add, same shape and bias") {
    CHECK(check_binary({3, 4}, {3, 4}, 14, [](auto& a, auto& b) { return add(a, b); }) <
          kTol);
    CHECK(check_binary({2, 3, 4}, {4}, 15, [](auto& a, auto& b) { return add(a, b); }) <
          kTol);
  }
  SUBCASE("affine") {
    Rng rng(42);
    Tensor x = random_tensor({2, 3, 4}, rng);
    Tensor w = random_tensor({4, 5}, rng);
    Tensor b = random_tensor({5}, rng);
    Probe probe({2, 3, 5}, 43);
    CHECK(grad_check({x, w, b}, [&](const std::vector<Tensor>& in) {
            return probe(affine(in[0], in[1], in[2]));
          }) < kTol);
  }
  SUBCASE("transpose_as") {
    CHECK(check_unary({2, 3, 8}, 44, [](const Tensor& x) {
            return transpose_as(x, {2, 3, 2, 4}, 1, 2, {4, 3, 4});
          }) < kTol);
  }
  SUBCASE("sub") {
    CHECK(check_binary({3, 4}, {3, 4}, 16, [](auto& a, auto& b) { return sub(a, b); }) <
          kTol);
  }
  SUBCASE("multiply") {
    CHECK(check_binary({3, 4}, {3, 4}, 17, [](auto& a, auto& b) { return multiply(a, b); }) <
          kTol);
  }
  SUBCASE("scale") {
    CHECK(check_unary({3, 4}, 18, [](const Tensor& x) { return scale(x, -2.5); }) < kTol);
  }
  SUBCASE("transpose") {
    CHECK(check_unary({2, 3, 4}, 19, [](const Tensor& x) { return transpose(x, 0, 2); }) <
          kTol);
  }
  SUBCASE("reshape") {
    CHECK(check_unary({2, 3, 4}, 20, [](const Tensor& x) { return reshape(x, {6, 4}); }) <
          kTol);
  }
  SUBCASE("concat") {
    CHECK(check_binary({2, 3}, {2, 5}, 21,
                       [](const Tensor& a, const Tensor& b) {
                         const std::vector<Tensor> parts{a, b};
                         return concat(parts, 1);
                       }) < kTol);
  }
  SUBCASE("slice") {
    CHECK(check_unary({4, 6}, 22, [](const Tensor& x) { return slice(x, 1, 1, 4); }) < kTol);
  }
  SUBCASE("embedding_lookup with repeated ids") {
    const std::vector<int> ids{2, 0, 2, 3};
    CHECK(check_unary({5, 3}, 23,
                      [&](const Tensor& t) { return embedding_lookup(t, ids); }) < kTol);
  }
  SUBCASE("conv1d, unbatched and batched") {
    Rng rng(24);
    Tensor x = random_tensor({9, 2}, rng);
    Tensor w = random_tensor({3, 2, 5}, rng);
    Tensor b = random_tensor({3}, rng);
    const Conv1dSpec spec{2, 2};
    Probe probe({5, 3}, 25);
    CHECK(grad_check({x, w, b}, [&](const std::vector<Tensor>& in) {
            return probe(conv1d(in[0], in[1], in[2], spec));
          }) < kTol);
    Tensor xb = random_tensor({2, 7, 2}, rng);
    Probe probe_b({2, 4, 3}, 26);
    CHECK(grad_check({xb, w, b}, [&](const std::vector<Tensor>& in) {
            return probe_b(conv1d(in[0], in[1], in[2], spec));
          }) < kTol);
  }
  SUBCASE("layer_norm") {
    Rng rng(27);
    Tensor x = random_tensor({3, 6}, rng);
    Tensor g = random_tensor({6}, rng);
    Tensor b = random_tensor({6}, rng);
    Probe probe({3, 6}, 28);
    CHECK(grad_check({x, g, b}, [&](const std::vector<Tensor>& in) {
            return probe(layer_norm(in[0], in[1], in[2]));
          }) < kTol);
  }
  SUBCASE("relu") {
    CHECK(check_unary({4, 5}, 29, [](const Tensor& x) { return relu(x); }) < kTol);
  }
  SUBCASE("exp") {
    CHECK(check_unary({4, 5}, 30, [](const Tensor& x) { return exp(x); }) < kTol);
  }
  SUBCASE("softmax on either axis") {
    CHECK(check_unary({4, 5}, 31, [](const Tensor& x) { return softmax(x, 1); }) < kTol);
    CHECK(check_unary({4, 5}, 32, [](const Tensor& x) { return softmax(x, 0); }) < kTol);
  }
  SUBCASE("log_softmax on either axis") {
    CHECK(check_unary({4, 5}, 33, [](const Tensor& x) { return log_softmax(x, 1); }) < kTol);
    CHECK(check_unary({2, 3, 4}, 34, [](const Tensor& x) { return log_softmax(x, 1); }) <
          kTol);
  }
  SUBCASE("masked_fill") {
    const std::vector<std::uint8_t> mask{0, 1, 0, 0, 1, 1, 0, 0, 0, 1, 0, 0};
    CHECK(check_unary({3, 4}, 35,
                      [&](const Tensor& x) { return masked_fill(x, mask, -3.0); }) < kTol);
  }
  SUBCASE("reductions") {
    CHECK(check_unary({3, 4}, 36, [](const Tensor& x) { return reduce_sum(x); }) < kTol);
    CHECK(check_unary({3, 4}, 37, [](const Tensor& x) { return reduce_sum(x, 0); }) < kTol);
    CHECK(check_unary({2, 3, 4}, 38, [](const Tensor& x) { return reduce_mean(x, 1); }) <
          kTol);
    CHECK(check_unary({3, 4}, 39, [](const Tensor& x) { return reduce_mean(x); }) < kTol);
  }
  SUBCASE("max_over_axis") {
    CHECK(check_unary({2, 5, 3}, 40, [](const Tensor& x) { return max_over_axis(x, 1); }) <
          kTol);
  }
  SUBCASE("dropout with a fixed stream") {
    CHECK(check_unary({4, 6}, 41, [](const Tensor& x) {
            Rng rng(99);
            return dropout(x, 0.3, rng);
          }) < kTol);
  }
}

TEST_CASE("max_over_axis routes ties to the first position") {
  Tensor x = Tensor::from({3, 1}, {2.0, 2.0, 1.0}, true);
  reduce_sum(max_over_axis(x, 0)).backward();
  CHECK(x.grad() == std::vector<double>{1.0, 0.0, 0.0});
}

TEST_CASE("masked positions take the fill value and get no gradient") {
  Tensor x = Tensor::from({3}, {1.0, 2.0, 3.0}, true);
  const std::vector<std::uint8_t> mask{0, 1, 0};
  const Tensor y = masked_fill(x, mask, -7.0);
  CHECK(y.at(1) == -7.0);
  reduce_sum(y).backward();
  CHECK(x.grad() == std::vector<double>{1.0, 0.0, 1.0});
}

TEST_CASE("tape replay is deterministic") {
  auto run = [] {
    Rng rng(5);
    Tensor w = random_tensor({4, 3}, rng);
    Tensor x = random_tensor({6, 4}, rng, false);
    Rng drop(8);
    const Tensor y = log_softmax(dropout(matmul(x, w), 0.2, drop), 1);
    const Tensor loss = reduce_mean(y);
    loss.backward();
    std::vector<double> out = w.grad();
    out.push_back(loss.item());
    return out;
  };
  CHECK(run() == run());
}

TEST_CASE("fused ops equal their compositions") {
  Rng rng(45);
  const Tensor x = random_tensor({2, 3, 4}, rng);
  const Tensor w = random_tensor({4, 5}, rng);
  const Tensor b = random_tensor({5}, rng);
  const Tensor fused = affine(x, w, b);
  const Tensor composed = add(matmul(x, w), b);
  CHECK(fused.shape() == composed.shape());
  CHECK(std::equal(fused.data().begin(), fused.data().end(), composed.data().begin()));

  const Tensor t = random_tensor({2, 3, 8}, rng);
  const Tensor a = transpose_as(t, {2, 3, 2, 4}, 1, 2, {4, 3, 4});
  const Tensor c = reshape(transpose(reshape(t, {2, 3, 2, 4}), 1, 2), {4, 3, 4});
  CHECK(a.shape() == c.shape());
  CHECK(std::equal(a.data().begin(), a.data().end(), c.data().begin()));
  CHECK_THROWS_AS(affine(x, w, random_tensor({4}, rng)), ShapeError);
  CHECK_THROWS_AS(transpose_as(t, {2, 3, 8}, 0, 3, {48}), ShapeError);
}
