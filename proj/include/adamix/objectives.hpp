#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "adamix/data.hpp"
#include "adamix/model.hpp"
#include "adamix/tensor.hpp"

namespace adamix {

struct LossWeights {
  double alpha = 0.5;        // MCE vs ACE balance in the classifier objective
  double beta = 0.3;         // teacher AMCE vs cosine balance in the generator objective
  double cosine_sign = 1.0;  // +1: maximize +(1-beta) cosine; -1: the opposite reading

  void validate() const;
};

struct LossReport {
  double l_amce = 0.0;
  double l_mce = 0.0;
  double l_ace = 0.0;
  double l_amce_teacher = 0.0;
  double l_cosine = 0.0;
  double classifier_total = 0.0;
  double generator_total = 0.0;
};

/// Row-wise one-hot targets [B, num_classes].
Tensor one_hot(std::span<const std::size_t> labels, std::size_t num_classes);

/// Mean over sets of sum_n ratio_n * CE(logits[member_n], onehot(label)).
/// logits [B, classes] are for the whole batch.
Tensor ace_from_logits(const Tensor& logits, std::span<const std::size_t> labels,
                       const std::vector<MixSet>& sets);

/// Mean over rows of CE(logits[k], targets[k]) with soft targets.
Tensor amce_from_logits(const Tensor& logits, const Tensor& targets);

/// Mean over sets of sum_n ratio_n * cos(mixed_features[k], source_features[k, n]).
/// source_features rows follow set order: [K*N, D].
Tensor cosine_from_features(const Tensor& mixed_features, const Tensor& source_features,
                            const std::vector<MixSet>& sets);

Tensor ace_loss(Classifier& net, const Tensor& images, std::span<const std::size_t> labels,
                const std::vector<MixSet>& sets, ops::BnMode mode);
Tensor amce_loss(Classifier& net, const Tensor& x_mix, const Tensor& y_mix, ops::BnMode mode);
/// CE of the classifier on the ratio-weighted linear mix of each set.
Tensor mce_loss(Classifier& net, const Tensor& images, const std::vector<MixSet>& sets,
                const Tensor& y_mix, ops::BnMode mode);
/// Teacher penultimate features of every set member, [K*N, D], no gradient.
Tensor teacher_source_features(Classifier& teacher, const Tensor& images,
                               const std::vector<MixSet>& sets);
/// Teacher penultimate features of x_mix against those of each source image.
Tensor cosine_loss(Classifier& teacher, const Tensor& x_mix, const Tensor& images,
                   const std::vector<MixSet>& sets);

/// amce + alpha * mce + (1 - alpha) * ace
Tensor classifier_objective(const Tensor& amce, const Tensor& mce, const Tensor& ace, double alpha);
double classifier_objective(double amce, double mce, double ace, double alpha);

/// amce - beta * amce_teacher + cosine_sign * (1 - beta) * cosine
Tensor generator_objective(const Tensor& amce, const Tensor& amce_teacher, const Tensor& cosine,
                           const LossWeights& weights);
double generator_objective(double amce, double amce_teacher, double cosine,
                           const LossWeights& weights);

/// A batch together with its mix sets and labels.
struct MixBatch {
  const Tensor& images;  // [B,C,H,W]
  const std::vector<MixSet>& sets;
  std::span<const std::size_t> labels;
  std::size_t num_classes;
};

/// Classifier objective on a batch given a generated x_mix [K,C,H,W].
/// Fills the classifier fields of `report`.
Tensor batch_classifier_objective(Classifier& net, const MixBatch& batch, const Tensor& x_mix,
                                  const LossWeights& weights, ops::BnMode mode,
                                  LossReport& report);

/// Generator objective with the classifier and teacher frozen; gradient
/// reaches only whatever x_mix depends on. Fills the generator fields.
Tensor batch_generator_objective(Classifier& net, Classifier& teacher, const MixBatch& batch,
                                 const Tensor& x_mix, const LossWeights& weights,
                                 LossReport& report);

}  // namespace adamix
