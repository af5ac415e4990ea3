#include "adamix/trainer.hpp"

#include <chrono>
#include <cmath>
#include <numbers>

#include "adamix/ops.hpp"

namespace adamix {

namespace {
void require_finite_loss(const Tensor& loss, const char* what) {
  if (!std::isfinite(loss.item())) {
    throw NonFiniteError(std::string(what) + ": loss is " + std::to_string(loss.item()));
  }
}

void check(bool ok, const std::string& message) {
  if (!ok) throw Error(message);
}
}  // namespace

std::string mode_name(TrainMode mode) {
  switch (mode) {
    case TrainMode::AdAutoMix:
      return "adautomix";
    case TrainMode::InputMixup:
      return "input-mixup";
    case TrainMode::Vanilla:
      return "vanilla";
  }
  return "unknown";
}

TrainMode parse_mode(const std::string& name) {
  for (auto mode : {TrainMode::AdAutoMix, TrainMode::InputMixup, TrainMode::Vanilla}) {
    if (mode_name(mode) == name) return mode;
  }
  throw Error("unknown training mode '" + name + "' (expected adautomix, input-mixup or vanilla)");
}

void TrainConfig::validate(const ArchDescriptor& arch) const {
  weights.validate();
  check(concentration > 0.0, "concentration must be positive");
  check(per_set >= 1, "per_set must be at least 1");
  check(mode != TrainMode::AdAutoMix || per_set >= 2, "adautomix needs per_set >= 2");
  check(mode != TrainMode::InputMixup || per_set == 2, "input-mixup needs per_set = 2");
  check(batch_size >= per_set, "batch_size must be at least per_set");
  check(sets_per_batch * per_set <= batch_size, "sets_per_batch * per_set exceeds batch_size");
  check(lr > 0.0, "lr must be positive");
  check(generator_lr > 0.0, "generator_lr must be positive");
  check(momentum >= 0.0 && momentum < 1.0, "momentum must lie in [0, 1)");
  check(weight_decay >= 0.0, "weight_decay must be nonnegative");
  check(classifier_steps >= 1, "classifier_steps must be at least 1");
  check(epochs >= 1, "epochs must be at least 1");
  check(xi_start >= 0.0 && xi_start <= 1.0, "xi_start must lie in [0, 1]");
  check(layer >= 1 && layer <= arch.stage_count(),
        "layer must lie in [1, " + std::to_string(arch.stage_count()) + "]");
}

BatchOptions TrainConfig::batch_options() const {
  BatchOptions opts;
  opts.batch_size = batch_size;
  opts.per_set = per_set;
  opts.sets_per_batch = sets_per_batch;
  opts.concentration = concentration;
  opts.augment = augment;
  return opts;
}

void Sgd::step(const std::vector<Tensor>& params, double lr) {
  if (buffers_.empty()) {
    for (const auto& p : params) buffers_.emplace_back(p.size(), 0.0);
  }
  if (buffers_.size() != params.size()) throw Error("Sgd: parameter list changed");
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor p = params[i];
    auto& buf = buffers_[i];
    if (buf.size() != p.size()) throw Error("Sgd: parameter size changed");
    const auto grad = p.grad();
    auto value = p.mutable_data();
    for (std::size_t j = 0; j < value.size(); ++j) {
      const double g = (grad.empty() ? 0.0 : grad[j]) + weight_decay_ * value[j];
      buf[j] = momentum_ * buf[j] + g;
      value[j] -= lr * buf[j];
    }
  }
}

std::uint64_t generator_seed(std::uint64_t seed) { return seed ^ 0x9e3779b97f4a7c15ULL; }

ModelState::ModelState(const ArchDescriptor& arch, const TrainConfig& config)
    : net(arch, config.seed),
      teacher(net.clone()),
      encoder(net, config.layer),
      theta(GeneratorParams::init(arch.stage_channels(config.layer), generator_seed(config.seed))),
      optimizer(config.momentum, config.weight_decay) {
  config.validate(arch);
  teacher.set_requires_grad(false);
}

double classifier_lr(const TrainConfig& config, std::size_t epoch) {
  const double phase = std::numbers::pi * double(epoch) / double(config.epochs);
  return config.lr * 0.5 * (1.0 + std::cos(phase));
}

void classifier_step(ModelState& state, const MixBatch& batch, const Tensor& x_mix,
                     const TrainConfig& config, double lr, LossReport& report) {
  state.net.zero_grad();
  const Tensor loss = batch_classifier_objective(state.net, batch, x_mix, config.weights,
                                                 ops::BnMode::Train, report);
  require_finite_loss(loss, "classifier step");
  loss.backward();
  state.optimizer.step(state.net.parameters(), lr);
}

Tensor batch_features(ModelState& state, const Tensor& images, const TrainConfig& config) {
  return encoder_features(state.encoder, images, config.layer);
}

void generator_step(ModelState& state, const MixBatch& batch, const Tensor& features,
                    const TrainConfig& config, double gamma, LossReport& report) {
  auto params = state.theta.parameters();
  for (auto& p : params) p.zero_grad();
  const Generated g = generate_from_features(batch.images, features, batch.sets, state.theta);
  const Tensor loss = batch_generator_objective(state.net, state.teacher, batch, g.mixed,
                                                config.weights, report);
  require_finite_loss(loss, "generator step");
  loss.backward();
  for (auto& p : params) {
    const auto grad = p.grad();
    if (grad.empty()) continue;
    auto value = p.mutable_data();
    for (std::size_t j = 0; j < value.size(); ++j) value[j] += gamma * grad[j];
  }
}

void vanilla_step(ModelState& state, const Batch& batch, const TrainConfig& config, double lr,
                  LossReport& report) {
  (void)config;
  state.net.zero_grad();
  const Tensor logits = state.net.forward(batch.images, ops::BnMode::Train);
  const Tensor loss = amce_from_logits(logits, one_hot(batch.labels, logits.dim(1)));
  require_finite_loss(loss, "vanilla step");
  report.classifier_total = loss.item();
  loss.backward();
  state.optimizer.step(state.net.parameters(), lr);
}

void baseline_input_mixup_step(ModelState& state, const Batch& batch, const TrainConfig& config,
                               double lr, LossReport& report) {
  if (config.per_set != 2) throw Error("input-mixup needs per_set = 2");
  std::vector<std::vector<double>> ratios;
  for (const auto& set : batch.sets) {
    if (set.members.size() != 2) throw Error("input-mixup needs pairs");
    ratios.push_back(set.ratios);
  }
  const std::size_t classes = state.net.descriptor().num_classes;
  const Tensor x = linear_mix(gather_sets(batch.images, batch.sets), ratios);
  const Tensor y = mix_set_labels(batch.sets, batch.labels, classes);
  state.net.zero_grad();
  const Tensor loss = amce_loss(state.net, x, y, ops::BnMode::Train);
  require_finite_loss(loss, "input-mixup step");
  report.l_mce = loss.item();
  report.classifier_total = loss.item();
  loss.backward();
  state.optimizer.step(state.net.parameters(), lr);
}

Tensor generate_detached(ModelState& state, const Batch& batch, const Tensor& features) {
  NoGradGuard no_grad;
  return generate_from_features(batch.images, features, batch.sets, state.theta).mixed;
}

TrainLogRow train_batch(ModelState& state, const Batch& batch, std::size_t num_classes,
                        const TrainConfig& config, std::size_t epoch, std::size_t total_steps) {
  const auto start = std::chrono::steady_clock::now();
  TrainLogRow row;
  row.epoch = epoch;
  row.step = state.step;
  row.lr = classifier_lr(config, epoch);
  row.generator_lr = config.generator_lr;

  // A short final batch may hold no complete set; it trains on plain CE.
  const bool mixing = !batch.sets.empty();
  if (config.mode == TrainMode::Vanilla || !mixing) {
    vanilla_step(state, batch, config, row.lr, row.report);
  } else if (config.mode == TrainMode::InputMixup) {
    baseline_input_mixup_step(state, batch, config, row.lr, row.report);
  } else {
    const MixBatch mix{batch.images, batch.sets, batch.labels, num_classes};
    const Tensor features = batch_features(state, batch.images, config);
    for (std::size_t t = 0; t < config.classifier_steps; ++t) {
      const Tensor x_mix = generate_detached(state, batch, features);
      classifier_step(state, mix, x_mix, config, row.lr, row.report);
    }
    for (std::size_t t = 0; t < config.generator_steps; ++t) {
      LossReport g;
      generator_step(state, mix, features, config, config.generator_lr, g);
      row.report.l_amce_teacher = g.l_amce_teacher;
      row.report.l_cosine = g.l_cosine;
      row.report.generator_total = g.generator_total;
    }
    row.xi = xi_at({config.xi_start, total_steps}, state.step);
    ema_update(state.teacher, state.net, row.xi);
    state.encoder.ema_from(state.net, row.xi);
  }
  ++state.step;
  row.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return row;
}

std::vector<TrainLogRow> train_epoch(ModelState& state, BatchIterator& batches,
                                     std::size_t num_classes, const TrainConfig& config,
                                     std::size_t epoch, std::size_t total_steps) {
  std::vector<TrainLogRow> rows;
  batches.start_epoch(epoch);
  while (auto batch = batches.next()) {
    try {
      rows.push_back(train_batch(state, *batch, num_classes, config, epoch, total_steps));
    } catch (const NonFiniteError& e) {
      TrainLogRow row;
      row.epoch = epoch;
      row.step = state.step++;
      row.lr = classifier_lr(config, epoch);
      row.generator_lr = config.generator_lr;
      row.skipped = true;
      rows.push_back(row);
      if (++state.skips > config.max_skips) {
        throw DivergenceError("training diverged at epoch " + std::to_string(epoch) + ", step " +
                              std::to_string(row.step) + ": " + e.what());
      }
    }
  }
  return rows;
}

}  // namespace adamix
