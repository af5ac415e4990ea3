#include <cmath>
#include <numbers>
#include <random>

#include "adamix/grad_check.hpp"
#include "adamix/ops.hpp"
#include "adamix/property_suite.hpp"
#include "doctest.h"

using namespace adamix;

namespace {

Tensor random_tensor(Shape shape, std::mt19937_64& rng, bool requires_grad = true,
                     double scale = 1.0) {
  std::normal_distribution<double> dist(0.0, scale);
  std::vector<double> v(shape_size(shape));
  for (auto& x : v) x = dist(rng);
  return Tensor::from(std::move(shape), std::move(v), requires_grad);
}

// sum(y * c) with a fixed random weighting so every output coordinate matters.
Tensor weighted_sum(const Tensor& y, std::uint64_t seed) {
  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
  Tensor c = random_tensor(y.shape(), rng, false);
  return ops::sum(ops::mul(y, c));
}

}  // namespace

TEST_CASE("softmax examples") {
  auto y = ops::softmax(Tensor::from({2}, {0.0, 0.0}), 0);
  CHECK(y.at(0) == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(y.at(1) == doctest::Approx(0.5).epsilon(1e-15));

  y = ops::softmax(Tensor::from({2}, {std::log(2.0), 0.0}), 0);
  CHECK(std::abs(y.at(0) - 2.0 / 3.0) < 1e-15);
  CHECK(std::abs(y.at(1) - 1.0 / 3.0) < 1e-15);
}

TEST_CASE("softmax rejects bad input") {
  CHECK_THROWS_AS(ops::softmax(Tensor::from({2}, {NAN, 0.0}), 0), Error);
  CHECK_THROWS_AS(ops::softmax(Tensor::from({2}, {INFINITY, 0.0}), 0), Error);
  CHECK_THROWS_AS(ops::softmax(Tensor::from({2}, {0.0, 0.0}), 1), Error);
}

TEST_CASE("softmax sums to one and is shift invariant") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    std::mt19937_64 rng(seed);
    Tensor x = random_tensor({3, 4, 5}, rng, false, 3.0);
    for (std::size_t axis = 0; axis < 3; ++axis) {
      Tensor y = ops::softmax(x, axis);
      Tensor totals = ops::sum_axis(y, axis);
      for (double t : totals.data()) CHECK(std::abs(t - 1.0) < 1e-9);
      Tensor shifted = ops::softmax(ops::add_scalar(x, 7.25), axis);
      for (std::size_t i = 0; i < y.size(); ++i) CHECK(std::abs(y.at(i) - shifted.at(i)) < 1e-9);
    }
  }
}

TEST_CASE("softmax gradient on random 3x4 input") {
  std::mt19937_64 rng(3);
  Tensor x = random_tensor({3, 4}, rng);
  const double err = grad_check([](const Tensor& t) { return weighted_sum(ops::softmax(t, 1), 1); }, x);
  CHECK(err < 1e-6);
}

TEST_CASE("cross_entropy_soft examples") {
  // Large margin toward the target class.
  auto loss = ops::cross_entropy_soft(Tensor::from({3}, {60.0, 0.0, 0.0}),
                                      Tensor::from({3}, {1.0, 0.0, 0.0}));
  CHECK(loss.item() >= 0.0);
  CHECK(loss.item() < 1e-20);

  loss = ops::cross_entropy_soft(Tensor::from({4}, {0.3, 0.3, 0.3, 0.3}),
                                 Tensor::from({4}, {0.1, 0.2, 0.3, 0.4}));
  CHECK(std::abs(loss.item() - std::log(4.0)) < 1e-12);

  // Scalar oracle for logits [1, -1], target [0.7, 0.3].
  const double p0 = std::exp(1.0) / (std::exp(1.0) + std::exp(-1.0));
  const double p1 = 1.0 - p0;
  const double expected = -0.7 * std::log(p0) - 0.3 * std::log(p1);
  loss = ops::cross_entropy_soft(Tensor::from({2}, {1.0, -1.0}), Tensor::from({2}, {0.7, 0.3}));
  CHECK(std::abs(loss.item() - expected) < 1e-12);

  Tensor logits = Tensor::from({2}, {1.0, -1.0}, true);
  const Tensor target = Tensor::from({2}, {0.7, 0.3});
  CHECK(grad_check([&](const Tensor& l) { return ops::cross_entropy_soft(l, target); }, logits) <
        1e-6);
}

TEST_CASE("cross_entropy_soft rejects unnormalized target") {
  CHECK_THROWS_AS(ops::cross_entropy_soft(Tensor::from({2}, {0.0, 0.0}),
                                          Tensor::from({2}, {0.5, 0.6})),
                  Error);
  CHECK_THROWS_AS(ops::cross_entropy_soft(Tensor::from({2}, {0.0, 0.0}),
                                          Tensor::from({2}, {1.5, -0.5})),
                  Error);
}

TEST_CASE("cross_entropy_soft gradient over random logits") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    std::mt19937_64 rng(seed);
    Tensor logits = random_tensor({3, 5}, rng, true, 2.0);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<double> t(15);
    for (std::size_t r = 0; r < 3; ++r) {
      double total = 0.0;
      for (std::size_t k = 0; k < 5; ++k) total += (t[r * 5 + k] = u(rng));
      for (std::size_t k = 0; k < 5; ++k) t[r * 5 + k] /= total;
    }
    const Tensor target = Tensor::from({3, 5}, t);
    CHECK(grad_check([&](const Tensor& l) { return weighted_sum(ops::cross_entropy_soft(l, target), seed); },
                     logits) < 1e-6);
  }
}

TEST_CASE("cosine_similarity examples") {
  CHECK(std::abs(ops::cosine_similarity(Tensor::from({2}, {3, 4}), Tensor::from({2}, {3, 4})).item() - 1.0) < 1e-15);
  CHECK(ops::cosine_similarity(Tensor::from({2}, {1, 0}), Tensor::from({2}, {0, 1})).item() == 0.0);
  CHECK(std::abs(ops::cosine_similarity(Tensor::from({2}, {1, 0}), Tensor::from({2}, {1, 1})).item() -
                 1.0 / std::numbers::sqrt2) < 1e-15);
  CHECK_THROWS_AS(ops::cosine_similarity(Tensor::from({2}, {0, 0}), Tensor::from({2}, {1, 1})), Error);
  CHECK_THROWS_AS(ops::cosine_similarity(Tensor::from({2}, {1, 0}), Tensor::from({2}, {0, 0})), Error);
}

TEST_CASE("upsample_bilinear examples") {
  Tensor plane = Tensor::full({2, 3, 3}, 0.25);
  Tensor up = ops::upsample_bilinear(plane, 7, 5);
  CHECK(up.shape() == Shape{2, 7, 5});
  for (double v : up.data()) CHECK(std::abs(v - 0.25) < 1e-15);

  up = ops::upsample_bilinear(Tensor::from({1, 1}, {0.8}), 4, 6);
  for (double v : up.data()) CHECK(v == 0.8);

  // Half-pixel (align_corners = false) sample positions for 2 -> 4 are
  // 0, 0.25, 0.75, 1 after clamping; the source is the plane 2y + x.
  up = ops::upsample_bilinear(Tensor::from({2, 2}, {0, 1, 2, 3}), 4, 4);
  const std::vector<double> expected = {0.0, 0.25, 0.75, 1.0,  0.5, 0.75, 1.25, 1.5,
                                        1.5, 1.75, 2.25, 2.5, 2.0, 2.25, 2.75, 3.0};
  for (std::size_t i = 0; i < expected.size(); ++i) CHECK(std::abs(up.at(i) - expected[i]) < 1e-15);

  CHECK_THROWS_AS(ops::upsample_bilinear(Tensor::zeros({4, 4}), 2, 4), Error);
}

TEST_CASE("upsample_bilinear preserves pixelwise partition of unity") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    std::mt19937_64 rng(seed);
    Tensor logits = random_tensor({3, 2, 3}, rng, false, 2.0);
    Tensor masks = ops::softmax(logits, 0);
    Tensor up = ops::upsample_bilinear(masks, 9, 7);
    Tensor totals = ops::sum_axis(up, 0);
    for (double t : totals.data()) CHECK(std::abs(t - 1.0) < 1e-6);
  }
}

TEST_CASE("grad_check on a polynomial") {
  Tensor x = Tensor::from({2}, {1.0, 2.0}, true);
  const double err = grad_check([](const Tensor& t) { return ops::sum(ops::mul(t, t)); }, x);
  CHECK(err < 1e-9);
  CHECK(x.grad()[0] == doctest::Approx(2.0));
  CHECK(x.grad()[1] == doctest::Approx(4.0));
}

TEST_CASE("grad_check reports non-finite values") {
  Tensor x = Tensor::from({1}, {0.0}, true);
  // NaN as soon as the coordinate is pushed above zero.
  auto f = [](const Tensor& t) {
    if (t.at(0) > 0.0) return ops::sum(ops::mul(t, Tensor::from({1}, {NAN})));
    return ops::sum(ops::mul(t, t));
  };
  CHECK_THROWS_AS(grad_check(f, x), Error);
}

TEST_CASE("backward is deterministic and leaves accumulate") {
  std::mt19937_64 rng(11);
  Tensor a = random_tensor({4, 3}, rng);
  Tensor b = random_tensor({3, 2}, rng);
  auto f = [&] { return ops::sum(ops::relu(ops::matmul(a, b))); };
  f().backward();
  std::vector<double> first(a.grad().begin(), a.grad().end());
  a.zero_grad();
  b.zero_grad();
  f().backward();
  for (std::size_t i = 0; i < first.size(); ++i) CHECK(a.grad()[i] == first[i]);
  f().backward();
  for (std::size_t i = 0; i < first.size(); ++i) CHECK(a.grad()[i] == 2.0 * first[i]);
}

TEST_CASE("computation record is topologically ordered") {
  std::mt19937_64 rng(5);
  Tensor a = random_tensor({2, 2}, rng);
  Tensor b = random_tensor({2, 2}, rng);
  Tensor root = ops::sum(ops::mul(ops::add(a, b), a));
  auto record = computation_record(root);
  REQUIRE(record.size() == 5);
  for (const auto& entry : record)
    for (auto in : entry.inputs) CHECK(in < entry.output);
  CHECK(record.back().op == "sum");
}

TEST_CASE("no-grad and frozen inputs record nothing") {
  Tensor w = Tensor::from({2}, {1.0, 2.0}, true);
  {
    NoGradGuard guard;
    CHECK_FALSE(ops::mul(w, w).requires_grad());
  }
  Tensor x = Tensor::from({2}, {3.0, 4.0}, true);
  Tensor y;
  {
    FreezeGuard freeze({w});
    y = ops::sum(ops::mul(w, x));
  }
  y.backward();
  CHECK_FALSE(w.has_grad());
  CHECK(x.grad()[0] == 1.0);
  CHECK(x.grad()[1] == 2.0);
}

TEST_CASE("shape errors are rejected") {
  CHECK_THROWS_AS(ops::add(Tensor::zeros({2}), Tensor::zeros({3})), Error);
  CHECK_THROWS_AS(ops::matmul(Tensor::zeros({2, 3}), Tensor::zeros({2, 3})), Error);
  CHECK_THROWS_AS(ops::conv2d(Tensor::zeros({1, 2, 4, 4}), Tensor::zeros({3, 1, 3, 3}), 1, 1), Error);
  CHECK_THROWS_AS(ops::reshape(Tensor::zeros({2, 3}), {4}), Error);
  CHECK_THROWS_AS(ops::slice(Tensor::zeros({2, 3}), 1, 2, 2), Error);
  CHECK_THROWS_AS(ops::broadcast_to(Tensor::zeros({2, 3}), {4, 3}), Error);
}

TEST_CASE("operation gradients match finite differences over 20 seeds") {
  for (const auto& result : operation_gradient_suite(20)) {
    INFO(result.name << " worst relative error " << result.value);
    CHECK(result.passed);
  }
}
