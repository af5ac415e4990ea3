#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "adamix/data.hpp"
#include "adamix/model.hpp"
#include "adamix/tensor.hpp"

namespace adamix {

/// Per-sample probability rows [size, num_classes] with true labels.
struct PredictionSet {
  std::size_t num_classes = 0;
  std::vector<double> probs;
  std::vector<std::size_t> labels;

  std::size_t size() const { return labels.size(); }
  std::span<const double> row(std::size_t i) const {
    return std::span<const double>(probs).subspan(i * num_classes, num_classes);
  }
  /// Rows on the simplex within `tol`, labels in range.
  void validate(double tol = 1e-6) const;
};

/// Softmax rows of logits [B, classes].
PredictionSet predictions_from_logits(const Tensor& logits, std::span<const std::size_t> labels);

/// Eval-mode predictions of the classifier on the whole dataset.
PredictionSet predict(Classifier& net, const Dataset& data, std::size_t batch_size = 100);

/// Fraction of samples whose label ranks among the k largest probabilities;
/// equal probabilities rank the lower class index first.
double top_k_accuracy(const PredictionSet& preds, std::size_t k);

struct EceConfig {
  std::size_t bins = 15;
};

/// Bin index of a confidence; bin b covers (b/bins, (b+1)/bins], bin 0 also holds 0.
std::size_t ece_bin(double confidence, std::size_t bins);

/// Sum over nonempty bins of (count/total) * |accuracy - mean confidence|,
/// binning on the max probability.
double ece(const PredictionSet& preds, const EceConfig& config = {});

using LogitsFn = std::function<Tensor(const Tensor&)>;

/// clamp(x + eps * sign(grad_x CE(logits(x), y)), 0, 1).
Tensor fgsm_attack(const LogitsFn& logits, const Tensor& x, std::span<const std::size_t> labels,
                   double eps);
/// Attack on the eval-mode classifier.
Tensor fgsm_attack(Classifier& net, const Tensor& x, std::span<const std::size_t> labels,
                   double eps);
/// Top-1 accuracy on FGSM images of the dataset.
double fgsm_accuracy(Classifier& net, const Dataset& data, double eps,
                     std::size_t batch_size = 100);

struct PatchSize {
  std::size_t height = 16;
  std::size_t width = 16;
};

/// Patches on a fixed grid; edge patches are clipped to the image.
std::size_t patch_count(const ImageShape& shape, const PatchSize& patch);

/// Zeroes round(ratio * patch_count) distinct patches per image. The patch
/// order of image i depends only on (seed, first_index + i), so masks grow
/// monotonically with the ratio.
Tensor occlude(const Tensor& images, const PatchSize& patch, double ratio, std::uint64_t seed,
               std::size_t first_index = 0);

/// Top-1 accuracy per ratio on occluded dataset images.
std::vector<double> occlusion_eval(Classifier& net, const Dataset& data, const PatchSize& patch,
                                   const std::vector<double>& ratios, std::uint64_t seed,
                                   std::size_t batch_size = 100);

}  // namespace adamix
