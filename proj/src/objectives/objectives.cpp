#include "adamix/objectives.hpp"

#include <cmath>

#include "adamix/mixblock.hpp"
#include "adamix/ops.hpp"

namespace adamix {

namespace {
void check_unit(double v, const char* name) {
  if (!(v >= 0.0 && v <= 1.0)) {
    throw Error(std::string(name) + " must lie in [0, 1], got " + std::to_string(v));
  }
}

// Per-row weights ratio / K for each set member, laid out over `rows`.
Tensor member_weights(const std::vector<MixSet>& sets, std::size_t rows, bool by_position) {
  if (sets.empty()) throw Error("no mix sets");
  std::vector<double> w(rows, 0.0);
  const double inv_k = 1.0 / double(sets.size());
  std::size_t pos = 0;
  for (const auto& set : sets) {
    if (set.ratios.size() != set.members.size()) throw Error("mix set ratio count mismatch");
    check_simplex(set.ratios);
    for (std::size_t n = 0; n < set.members.size(); ++n, ++pos) {
      const std::size_t row = by_position ? pos : set.members[n];
      if (row >= rows) throw Error("mix set member " + std::to_string(row) + " out of range");
      w[row] += set.ratios[n] * inv_k;
    }
  }
  return Tensor::from({rows}, std::move(w));
}

// Rows of a no-grad [B,D] tensor in set-member order: [K*N, D].
Tensor gather_rows(const Tensor& x, const std::vector<MixSet>& sets) {
  const std::size_t dim = x.dim(1);
  std::vector<double> values;
  for (const auto& set : sets)
    for (auto m : set.members)
      values.insert(values.end(), x.data().begin() + long(m * dim),
                    x.data().begin() + long((m + 1) * dim));
  const std::size_t rows = values.size() / dim;
  return Tensor::from({rows, dim}, std::move(values));
}
}  // namespace

void LossWeights::validate() const {
  check_unit(alpha, "alpha");
  check_unit(beta, "beta");
  if (cosine_sign != 1.0 && cosine_sign != -1.0) throw Error("cosine_sign must be +1 or -1");
}

Tensor one_hot(std::span<const std::size_t> labels, std::size_t num_classes) {
  std::vector<double> v(labels.size() * num_classes, 0.0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= num_classes) {
      throw Error("label " + std::to_string(labels[i]) + " outside [0, " +
                  std::to_string(num_classes) + ")");
    }
    v[i * num_classes + labels[i]] = 1.0;
  }
  return Tensor::from({labels.size(), num_classes}, std::move(v));
}

Tensor ace_from_logits(const Tensor& logits, std::span<const std::size_t> labels,
                       const std::vector<MixSet>& sets) {
  if (logits.rank() != 2 || logits.dim(0) != labels.size()) {
    throw Error("ace: logits " + shape_str(logits.shape()) + " do not match " +
                std::to_string(labels.size()) + " labels");
  }
  const Tensor ce = ops::cross_entropy_soft(logits, one_hot(labels, logits.dim(1)));
  return ops::sum(ops::mul(ce, member_weights(sets, labels.size(), false)));
}

Tensor amce_from_logits(const Tensor& logits, const Tensor& targets) {
  return ops::mean(ops::cross_entropy_soft(logits, targets));
}

Tensor cosine_from_features(const Tensor& mixed_features, const Tensor& source_features,
                            const std::vector<MixSet>& sets) {
  const std::size_t k = mixed_features.dim(0), dim = mixed_features.dim(1);
  if (sets.size() != k) throw Error("cosine: one mixed feature row per set required");
  const std::size_t n = sets.front().members.size();
  if (source_features.shape() != Shape{k * n, dim}) {
    throw Error("cosine: source features " + shape_str(source_features.shape()) +
                " do not match " + std::to_string(k) + " sets of " + std::to_string(n));
  }
  const Tensor repeated = ops::reshape(
      ops::broadcast_to(ops::reshape(mixed_features, {k, 1, dim}), {k, n, dim}), {k * n, dim});
  const Tensor cos = ops::cosine_similarity(repeated, source_features);
  return ops::sum(ops::mul(cos, member_weights(sets, k * n, true)));
}

Tensor ace_loss(Classifier& net, const Tensor& images, std::span<const std::size_t> labels,
                const std::vector<MixSet>& sets, ops::BnMode mode) {
  return ace_from_logits(net.forward(images, mode), labels, sets);
}

Tensor amce_loss(Classifier& net, const Tensor& x_mix, const Tensor& y_mix, ops::BnMode mode) {
  return amce_from_logits(net.forward(x_mix, mode), y_mix);
}

Tensor mce_loss(Classifier& net, const Tensor& images, const std::vector<MixSet>& sets,
                const Tensor& y_mix, ops::BnMode mode) {
  std::vector<std::vector<double>> ratios;
  for (const auto& set : sets) ratios.push_back(set.ratios);
  return amce_loss(net, linear_mix(gather_sets(images, sets), ratios), y_mix, mode);
}

Tensor teacher_source_features(Classifier& teacher, const Tensor& images,
                               const std::vector<MixSet>& sets) {
  NoGradGuard no_grad;
  return gather_rows(teacher.forward_full(images, ops::BnMode::Eval).features, sets);
}

Tensor cosine_loss(Classifier& teacher, const Tensor& x_mix, const Tensor& images,
                   const std::vector<MixSet>& sets) {
  const Tensor sources = teacher_source_features(teacher, images, sets);
  const Tensor mixed = teacher.forward_full(x_mix, ops::BnMode::Eval).features;
  return cosine_from_features(mixed, sources, sets);
}

Tensor classifier_objective(const Tensor& amce, const Tensor& mce, const Tensor& ace,
                            double alpha) {
  check_unit(alpha, "alpha");
  return ops::add(amce, ops::add(ops::scale(mce, alpha), ops::scale(ace, 1.0 - alpha)));
}

double classifier_objective(double amce, double mce, double ace, double alpha) {
  check_unit(alpha, "alpha");
  return amce + (alpha * mce + (1.0 - alpha) * ace);
}

Tensor generator_objective(const Tensor& amce, const Tensor& amce_teacher, const Tensor& cosine,
                           const LossWeights& weights) {
  weights.validate();
  return ops::add(ops::sub(amce, ops::scale(amce_teacher, weights.beta)),
                  ops::scale(cosine, weights.cosine_sign * (1.0 - weights.beta)));
}

double generator_objective(double amce, double amce_teacher, double cosine,
                           const LossWeights& weights) {
  weights.validate();
  return (amce - amce_teacher * weights.beta) +
         cosine * (weights.cosine_sign * (1.0 - weights.beta));
}

Tensor batch_classifier_objective(Classifier& net, const MixBatch& batch, const Tensor& x_mix,
                                  const LossWeights& weights, ops::BnMode mode,
                                  LossReport& report) {
  const Tensor y_mix = mix_set_labels(batch.sets, batch.labels, batch.num_classes);
  const Tensor amce = amce_loss(net, x_mix, y_mix, mode);
  const Tensor mce = mce_loss(net, batch.images, batch.sets, y_mix, mode);
  const Tensor ace = ace_loss(net, batch.images, batch.labels, batch.sets, mode);
  const Tensor total = classifier_objective(amce, mce, ace, weights.alpha);
  report.l_amce = amce.item();
  report.l_mce = mce.item();
  report.l_ace = ace.item();
  report.classifier_total = total.item();
  return total;
}

Tensor batch_generator_objective(Classifier& net, Classifier& teacher, const MixBatch& batch,
                                 const Tensor& x_mix, const LossWeights& weights,
                                 LossReport& report) {
  FreezeGuard freeze_net(net.parameters());
  FreezeGuard freeze_teacher(teacher.parameters());
  const Tensor y_mix = mix_set_labels(batch.sets, batch.labels, batch.num_classes);
  const Tensor amce = amce_loss(net, x_mix, y_mix, ops::BnMode::TrainFrozen);
  // One teacher pass on x_mix serves both teacher terms.
  const auto teacher_out = teacher.forward_full(x_mix, ops::BnMode::Eval);
  const Tensor amce_teacher = amce_from_logits(teacher_out.logits, y_mix);
  const Tensor cosine = cosine_from_features(
      teacher_out.features, teacher_source_features(teacher, batch.images, batch.sets),
      batch.sets);
  const Tensor total = generator_objective(amce, amce_teacher, cosine, weights);
  report.l_amce = amce.item();
  report.l_amce_teacher = amce_teacher.item();
  report.l_cosine = cosine.item();
  report.generator_total = total.item();
  return total;
}

}  // namespace adamix
