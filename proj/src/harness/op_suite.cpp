#include <algorithm>
#include <functional>
#include <random>

#include "adamix/grad_check.hpp"
#include "adamix/ops.hpp"
#include "adamix/property_suite.hpp"

namespace adamix {

namespace {

Tensor random_leaf(Shape shape, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, 1.0);
  std::vector<double> v(shape_size(shape));
  for (auto& x : v) x = dist(rng);
  return Tensor::from(std::move(shape), std::move(v), true);
}

struct OpCase {
  const char* name;
  std::vector<Shape> shapes;
  std::function<Tensor(const std::vector<Tensor>&)> apply;
};

std::vector<OpCase> op_cases() {
  using P = const std::vector<Tensor>&;
  return {
      {"matmul", {{3, 4}, {4, 2}}, [](P p) { return ops::matmul(p[0], p[1]); }},
      {"matmul_batched", {{2, 3, 4}, {2, 4, 5}}, [](P p) { return ops::matmul(p[0], p[1]); }},
      {"conv2d_3x3_stride1", {{2, 2, 5, 5}, {3, 2, 3, 3}},
       [](P p) { return ops::conv2d(p[0], p[1], 1, 1); }},
      {"conv2d_3x3_stride2", {{2, 2, 6, 5}, {3, 2, 3, 3}},
       [](P p) { return ops::conv2d(p[0], p[1], 2, 1); }},
      {"conv2d_1x1", {{2, 3, 4, 4}, {2, 3, 1, 1}}, [](P p) { return ops::conv2d(p[0], p[1], 1, 0); }},
      {"relu", {{4, 5}}, [](P p) { return ops::relu(p[0]); }},
      {"global_avg_pool", {{2, 3, 3, 2}}, [](P p) { return ops::global_avg_pool(p[0]); }},
      {"concat_channels", {{2, 1, 3, 2}, {2, 2, 3, 2}}, [](P p) { return ops::concat({p[0], p[1]}, 1); }},
      {"hadamard", {{3, 3}, {3, 3}}, [](P p) { return ops::mul(p[0], p[1]); }},
      {"scale", {{3, 2}}, [](P p) { return ops::scale(p[0], -1.7); }},
      {"add", {{3, 2}, {3, 2}}, [](P p) { return ops::add(p[0], p[1]); }},
      {"sub", {{3, 2}, {3, 2}}, [](P p) { return ops::sub(p[0], p[1]); }},
      {"reshape_transpose", {{2, 6}}, [](P p) { return ops::transpose(ops::reshape(p[0], {3, 4})); }},
      {"permute", {{2, 3, 4}}, [](P p) { return ops::permute(p[0], {2, 0, 1}); }},
      {"mean", {{3, 4}}, [](P p) { return ops::mean(p[0]); }},
      {"mean_axis", {{3, 4, 2}}, [](P p) { return ops::mean_axis(p[0], 1); }},
      {"broadcast_slice", {{2, 1, 3}},
       [](P p) { return ops::slice(ops::broadcast_to(p[0], {2, 4, 3}), 1, 1, 2); }},
      {"batch_norm_train", {{3, 2, 2, 2}, {2}, {2}},
       [](P p) {
         ops::BatchNormStats stats{{0.0, 0.0}, {1.0, 1.0}};
         return ops::batch_norm(p[0], p[1], p[2], stats, ops::BnMode::TrainFrozen);
       }},
      {"batch_norm_eval", {{3, 2, 2, 2}, {2}, {2}},
       [](P p) {
         ops::BatchNormStats stats{{0.3, -0.2}, {1.5, 0.7}};
         return ops::batch_norm(p[0], p[1], p[2], stats, ops::BnMode::Eval);
       }},
      {"softmax", {{2, 3, 4}}, [](P p) { return ops::softmax(p[0], 1); }},
      {"log_softmax", {{3, 4}}, [](P p) { return ops::log_softmax(p[0], 1); }},
      {"upsample_bilinear", {{2, 2, 3}}, [](P p) { return ops::upsample_bilinear(p[0], 5, 7); }},
      {"cosine_similarity", {{3, 4}, {3, 4}}, [](P p) { return ops::cosine_similarity(p[0], p[1]); }},
      {"linear", {{3, 4}, {2, 4}, {2}}, [](P p) { return ops::linear(p[0], p[1], p[2]); }},
      {"channel_bias", {{2, 3, 2, 2}, {3}}, [](P p) { return ops::add_channel_bias(p[0], p[1]); }},
  };
}

}  // namespace

std::vector<CheckResult> operation_gradient_suite(std::size_t seeds) {
  constexpr double kThreshold = 1e-5;
  std::vector<CheckResult> results;
  for (const auto& c : op_cases()) {
    double worst = 0.0;
    for (std::size_t seed = 0; seed < seeds; ++seed) {
      std::mt19937_64 rng(seed * 7919 + 17);
      std::vector<Tensor> params;
      for (const auto& shape : c.shapes) params.push_back(random_leaf(shape, rng));
      // Fixed random weighting of the output so every coordinate matters.
      Tensor probe = c.apply(params);
      std::vector<double> weights(probe.size());
      std::normal_distribution<double> dist(0.0, 1.0);
      for (auto& w : weights) w = dist(rng);
      const Tensor weight = Tensor::from(probe.shape(), weights);
      auto f = [&] { return ops::sum(ops::mul(c.apply(params), weight)); };
      worst = std::max(worst, grad_check(f, params));
    }
    results.push_back({c.name, worst, kThreshold, worst < kThreshold, ""});
  }
  return results;
}

}  // namespace adamix
