#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "adamix/metrics.hpp"
#include "adamix/ops.hpp"
#include "adamix/property_suite.hpp"

namespace adamix {

namespace {

// Sorts class indices by (probability desc, index asc) and looks for the label.
double top_k_by_enumeration(const PredictionSet& p, std::size_t k) {
  std::size_t hits = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    std::vector<std::size_t> order(p.num_classes);
    std::iota(order.begin(), order.end(), 0);
    const auto row = p.row(i);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return row[a] > row[b]; });
    hits += std::find(order.begin(), order.begin() + long(k), p.labels[i]) !=
            order.begin() + long(k);
  }
  return double(hits) / double(p.size());
}

ArchDescriptor tiny_arch() {
  ArchDescriptor d;
  d.input = {3, 8, 8};
  d.widths = {4, 6, 8, 8};
  d.blocks_per_stage = 1;
  d.num_classes = 3;
  return d;
}

Dataset tiny_data(std::size_t n) {
  DatasetSpec spec;
  spec.train_size = n;
  spec.test_size = 3;
  return make_synthetic(spec).first;
}

CheckResult ece_fixture() {
  // Two nonempty bins of three samples each: (8/15, 9/15] and (13/15, 14/15].
  PredictionSet p;
  p.num_classes = 3;
  p.probs = {0.55, 0.30, 0.15, 0.20, 0.56, 0.24, 0.58, 0.02, 0.40,
             0.90, 0.05, 0.05, 0.05, 0.05, 0.90, 0.04, 0.92, 0.04};
  p.labels = {0, 1, 2, 0, 2, 1};
  const double low = std::abs(2.0 / 3.0 - (0.55 + 0.56 + 0.58) / 3.0);
  const double high = std::abs(3.0 / 3.0 - (0.90 + 0.90 + 0.92) / 3.0);
  const double oracle = 3.0 / 6.0 * low + 3.0 / 6.0 * high;
  const double diff = std::abs(ece(p) - oracle);
  return {"ece_six_sample_fixture", diff, 0.0, diff == 0.0, "abs difference to hand binning"};
}

CheckResult top_k_fixtures() {
  std::mt19937_64 rng(7);
  std::uniform_int_distribution<int> level(0, 3);
  std::size_t mismatches = 0;
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t classes = 2 + std::size_t(trial % 5), n = 9;
    PredictionSet p;
    p.num_classes = classes;
    for (std::size_t i = 0; i < n; ++i) {
      std::vector<double> row(classes);
      for (auto& v : row) v = double(level(rng));
      double total = std::accumulate(row.begin(), row.end(), 0.0);
      if (total == 0.0) {
        row.assign(classes, 1.0);
        total = double(classes);
      }
      for (auto v : row) p.probs.push_back(v / total);
      p.labels.push_back(std::uniform_int_distribution<std::size_t>(0, classes - 1)(rng));
    }
    for (std::size_t k = 1; k <= classes; ++k)
      mismatches += top_k_accuracy(p, k) != top_k_by_enumeration(p, k);
  }
  return {"top_k_enumeration", double(mismatches), 0.0, mismatches == 0, "fixture mismatches"};
}

CheckResult fgsm_ball() {
  Classifier net(tiny_arch(), 3);
  const Dataset data = tiny_data(6);
  std::vector<std::size_t> idx(6), labels;
  std::iota(idx.begin(), idx.end(), 0);
  for (auto i : idx) labels.push_back(data.images[i].label);
  const Tensor x = data.stack(idx);
  const double eps = 8.0 / 255.0;
  const Tensor adv = fgsm_attack(net, x, labels, eps);
  double excess = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    excess = std::max(excess, std::abs(adv.at(i) - x.at(i)) - eps);
    if (adv.at(i) < 0.0 || adv.at(i) > 1.0) excess = std::max(excess, 1.0);
  }
  return {"fgsm_eps_ball", std::max(excess, 0.0), 1e-15, excess <= 1e-15,
          "max distance beyond eps"};
}

CheckResult fgsm_linear_sign() {
  // logits = W x + b; d CE / d x_j = sum_c (softmax_c - [c == y]) W[c][j].
  const double wv[4] = {1.0, -2.0, 0.5, 3.0}, bv[2] = {0.1, -0.2};
  const Tensor w = Tensor::from({2, 2}, {wv[0], wv[1], wv[2], wv[3]});
  const Tensor b = Tensor::from({2}, {bv[0], bv[1]});
  const auto logits = [&](const Tensor& in) { return ops::linear(in, w, b); };
  const double eps = 0.05;
  std::size_t mismatches = 0;
  for (std::size_t y = 0; y < 2; ++y)
    for (const auto& px : std::vector<std::vector<double>>{{0.4, 0.6}, {0.7, 0.2}, {0.5, 0.5}}) {
      const std::vector<std::size_t> label{y};
      const Tensor adv = fgsm_attack(logits, Tensor::from({1, 2}, px), label, eps);
      const double z0 = wv[0] * px[0] + wv[1] * px[1] + bv[0];
      const double z1 = wv[2] * px[0] + wv[3] * px[1] + bv[1];
      const double p0 = 1.0 / (1.0 + std::exp(z1 - z0));
      const double d0 = p0 - (y == 0), d1 = (1.0 - p0) - (y == 1);
      for (std::size_t j = 0; j < 2; ++j) {
        const double g = d0 * wv[j] + d1 * wv[2 + j];
        const double step = adv.at(j) - px[j];
        mismatches += (step > 0.0) != (g > 0.0) || std::abs(std::abs(step) - eps) > 1e-12;
      }
    }
  return {"fgsm_linear_gradient_sign", double(mismatches), 0.0, mismatches == 0,
          "coordinates off the analytic sign"};
}

CheckResult occlusion_zero() {
  Classifier net(tiny_arch(), 1);
  const Dataset data = tiny_data(30);
  const double clean = top_k_accuracy(predict(net, data, 7), 1);
  const double occluded = occlusion_eval(net, data, PatchSize{4, 4}, {0.0}, 3, 7).at(0);
  const double diff = std::abs(occluded - clean);
  return {"occlusion_ratio_zero", diff, 0.0, diff == 0.0, "abs difference to clean accuracy"};
}

}  // namespace

std::vector<CheckResult> metric_oracle_suite() {
  return {ece_fixture(), top_k_fixtures(), fgsm_ball(), fgsm_linear_sign(), occlusion_zero()};
}

}  // namespace adamix
