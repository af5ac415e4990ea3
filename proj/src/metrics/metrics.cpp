#include "adamix/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "adamix/objectives.hpp"
#include "adamix/ops.hpp"

namespace adamix {

namespace {
// Runs `fn(first, indices)` over consecutive dataset slices.
template <typename Fn>
void for_each_batch(const Dataset& data, std::size_t batch_size, Fn&& fn) {
  if (batch_size == 0) throw Error("batch_size must be positive");
  for (std::size_t first = 0; first < data.size(); first += batch_size) {
    std::vector<std::size_t> indices(std::min(batch_size, data.size() - first));
    std::iota(indices.begin(), indices.end(), first);
    fn(first, indices);
  }
}

std::vector<std::size_t> labels_of(const Dataset& data, const std::vector<std::size_t>& indices) {
  std::vector<std::size_t> labels;
  for (auto i : indices) labels.push_back(data.images[i].label);
  return labels;
}

std::size_t argmax(std::span<const double> row) {
  return std::size_t(std::max_element(row.begin(), row.end()) - row.begin());
}
}  // namespace

void PredictionSet::validate(double tol) const {
  if (num_classes == 0) throw Error("prediction set has no classes");
  if (probs.size() != labels.size() * num_classes) {
    throw Error("prediction set: " + std::to_string(probs.size()) + " probabilities for " +
                std::to_string(labels.size()) + " samples of " + std::to_string(num_classes) +
                " classes");
  }
  for (std::size_t i = 0; i < size(); ++i) {
    if (labels[i] >= num_classes) throw Error("prediction set: label out of range");
    double total = 0.0;
    for (double p : row(i)) {
      if (!(p >= -tol && p <= 1.0 + tol)) throw Error("prediction set: probability outside [0, 1]");
      total += p;
    }
    if (std::abs(total - 1.0) > tol) {
      throw Error("prediction set: row " + std::to_string(i) + " sums to " +
                  std::to_string(total));
    }
  }
}

PredictionSet predictions_from_logits(const Tensor& logits, std::span<const std::size_t> labels) {
  if (logits.rank() != 2 || logits.dim(0) != labels.size()) {
    throw Error("predictions: logits " + shape_str(logits.shape()) + " do not match " +
                std::to_string(labels.size()) + " labels");
  }
  NoGradGuard no_grad;
  const Tensor p = ops::softmax(logits, 1);
  PredictionSet preds;
  preds.num_classes = logits.dim(1);
  preds.probs.assign(p.data().begin(), p.data().end());
  preds.labels.assign(labels.begin(), labels.end());
  return preds;
}

PredictionSet predict(Classifier& net, const Dataset& data, std::size_t batch_size) {
  NoGradGuard no_grad;
  PredictionSet preds;
  preds.num_classes = net.descriptor().num_classes;
  for_each_batch(data, batch_size, [&](std::size_t, const std::vector<std::size_t>& indices) {
    const auto labels = labels_of(data, indices);
    const auto part =
        predictions_from_logits(net.forward(data.stack(indices), ops::BnMode::Eval), labels);
    preds.probs.insert(preds.probs.end(), part.probs.begin(), part.probs.end());
    preds.labels.insert(preds.labels.end(), labels.begin(), labels.end());
  });
  return preds;
}

double top_k_accuracy(const PredictionSet& preds, std::size_t k) {
  if (preds.size() == 0) throw Error("top_k_accuracy: empty prediction set");
  if (k == 0 || k > preds.num_classes) {
    throw Error("top_k_accuracy: k = " + std::to_string(k) + " outside [1, " +
                std::to_string(preds.num_classes) + "]");
  }
  std::size_t hits = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const auto row = preds.row(i);
    const std::size_t y = preds.labels[i];
    std::size_t rank = 0;
    for (std::size_t j = 0; j < row.size(); ++j)
      if (row[j] > row[y] || (row[j] == row[y] && j < y)) ++rank;
    if (rank < k) ++hits;
  }
  return double(hits) / double(preds.size());
}

std::size_t ece_bin(double confidence, std::size_t bins) {
  std::size_t b = std::min(bins - 1, std::size_t(std::max(0.0, confidence) * double(bins)));
  while (b > 0 && confidence <= double(b) / double(bins)) --b;
  while (b + 1 < bins && confidence > double(b + 1) / double(bins)) ++b;
  return b;
}

double ece(const PredictionSet& preds, const EceConfig& config) {
  if (preds.size() == 0) throw Error("ece: empty prediction set");
  if (config.bins == 0) throw Error("ece: bin count must be positive");
  std::vector<std::size_t> count(config.bins, 0), correct(config.bins, 0);
  std::vector<double> confidence(config.bins, 0.0);
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const auto row = preds.row(i);
    const std::size_t top = argmax(row);
    const std::size_t b = ece_bin(row[top], config.bins);
    ++count[b];
    confidence[b] += row[top];
    if (top == preds.labels[i]) ++correct[b];
  }
  double total = 0.0;
  for (std::size_t b = 0; b < config.bins; ++b) {
    if (count[b] == 0) continue;
    const double n = double(count[b]);
    total += n / double(preds.size()) * std::abs(double(correct[b]) / n - confidence[b] / n);
  }
  return total;
}

Tensor fgsm_attack(const LogitsFn& logits, const Tensor& x, std::span<const std::size_t> labels,
                   double eps) {
  if (!(eps >= 0.0)) throw Error("fgsm_attack: eps must be nonnegative");
  Tensor input = x.detach();
  input.set_requires_grad(true);
  const Tensor out = logits(input);
  // Summed CE: each sample's gradient is that of its own loss.
  const Tensor loss = ops::sum(ops::cross_entropy_soft(out, one_hot(labels, out.dim(1))));
  loss.backward();
  std::vector<double> adv(x.data().begin(), x.data().end());
  const auto grad = input.grad();
  for (std::size_t i = 0; i < adv.size(); ++i) {
    const double g = grad.empty() ? 0.0 : grad[i];
    const double s = g > 0.0 ? 1.0 : (g < 0.0 ? -1.0 : 0.0);
    adv[i] = std::clamp(adv[i] + eps * s, 0.0, 1.0);
  }
  return Tensor::from(x.shape(), std::move(adv));
}

Tensor fgsm_attack(Classifier& net, const Tensor& x, std::span<const std::size_t> labels,
                   double eps) {
  FreezeGuard freeze(net.parameters());
  return fgsm_attack([&](const Tensor& in) { return net.forward(in, ops::BnMode::Eval); }, x,
                     labels, eps);
}

double fgsm_accuracy(Classifier& net, const Dataset& data, double eps, std::size_t batch_size) {
  PredictionSet preds;
  preds.num_classes = net.descriptor().num_classes;
  for_each_batch(data, batch_size, [&](std::size_t, const std::vector<std::size_t>& indices) {
    const auto labels = labels_of(data, indices);
    const Tensor adv = fgsm_attack(net, data.stack(indices), labels, eps);
    NoGradGuard no_grad;
    const auto part = predictions_from_logits(net.forward(adv, ops::BnMode::Eval), labels);
    preds.probs.insert(preds.probs.end(), part.probs.begin(), part.probs.end());
    preds.labels.insert(preds.labels.end(), labels.begin(), labels.end());
  });
  return top_k_accuracy(preds, 1);
}

std::size_t patch_count(const ImageShape& shape, const PatchSize& patch) {
  if (patch.height == 0 || patch.width == 0) throw Error("patch size must be positive");
  const std::size_t rows = (shape.height + patch.height - 1) / patch.height;
  const std::size_t cols = (shape.width + patch.width - 1) / patch.width;
  return rows * cols;
}

Tensor occlude(const Tensor& images, const PatchSize& patch, double ratio, std::uint64_t seed,
               std::size_t first_index) {
  if (images.rank() != 4) throw Error("occlude: expected [B,C,H,W], got " + shape_str(images.shape()));
  if (!(ratio >= 0.0 && ratio <= 1.0)) throw Error("occlude: ratio must lie in [0, 1]");
  const std::size_t b = images.dim(0), c = images.dim(1), h = images.dim(2), w = images.dim(3);
  const ImageShape shape{c, h, w};
  const std::size_t total = patch_count(shape, patch);
  const std::size_t cols = (w + patch.width - 1) / patch.width;
  const auto masked = std::size_t(std::lround(ratio * double(total)));
  std::vector<double> out(images.data().begin(), images.data().end());
  std::vector<std::size_t> order(total);
  for (std::size_t i = 0; i < b; ++i) {
    const std::uint64_t index = first_index + i;
    std::seed_seq seq{std::uint32_t(seed), std::uint32_t(seed >> 32), std::uint32_t(index),
                      std::uint32_t(index >> 32)};
    std::mt19937_64 rng(seq);
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t m = 0; m < masked; ++m) {
      const std::size_t y0 = (order[m] / cols) * patch.height;
      const std::size_t x0 = (order[m] % cols) * patch.width;
      for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t y = y0; y < std::min(h, y0 + patch.height); ++y)
          for (std::size_t x = x0; x < std::min(w, x0 + patch.width); ++x)
            out[((i * c + ch) * h + y) * w + x] = 0.0;
    }
  }
  return Tensor::from(images.shape(), std::move(out));
}

std::vector<double> occlusion_eval(Classifier& net, const Dataset& data, const PatchSize& patch,
                                   const std::vector<double>& ratios, std::uint64_t seed,
                                   std::size_t batch_size) {
  NoGradGuard no_grad;
  std::vector<double> accuracy;
  for (double ratio : ratios) {
    PredictionSet preds;
    preds.num_classes = net.descriptor().num_classes;
    for_each_batch(data, batch_size, [&](std::size_t first, const std::vector<std::size_t>& indices) {
      const auto labels = labels_of(data, indices);
      const Tensor x = occlude(data.stack(indices), patch, ratio, seed, first);
      const auto part = predictions_from_logits(net.forward(x, ops::BnMode::Eval), labels);
      preds.probs.insert(preds.probs.end(), part.probs.begin(), part.probs.end());
      preds.labels.insert(preds.labels.end(), labels.begin(), labels.end());
    });
    accuracy.push_back(top_k_accuracy(preds, 1));
  }
  return accuracy;
}

}  // namespace adamix
