#include <cmath>
#include <limits>

#include "adamix/ops.hpp"
#include "adamix/trainer.hpp"
#include "doctest.h"

using namespace adamix;

namespace {

using Snapshot = std::vector<std::vector<double>>;

Snapshot snapshot(const std::vector<Tensor>& params) {
  Snapshot s;
  for (const auto& p : params) s.emplace_back(p.data().begin(), p.data().end());
  return s;
}

Snapshot snapshot(const Classifier& net) {
  Snapshot s = snapshot(net.parameters());
  for (const auto* st : net.batch_norm_stats()) {
    s.push_back(st->running_mean);
    s.push_back(st->running_var);
  }
  return s;
}

struct Snapshots {
  Snapshot net, teacher, encoder, theta;
};

Snapshots snapshot_all(const ModelState& state) {
  return {snapshot(state.net), snapshot(state.teacher), snapshot(state.encoder.network()),
          snapshot(state.theta.parameters())};
}

ArchDescriptor tiny_arch() {
  ArchDescriptor d;
  d.input = {3, 8, 8};
  d.widths = {4, 6, 8, 8};
  d.blocks_per_stage = 1;
  d.num_classes = 3;
  return d;
}

TrainConfig tiny_config(std::uint64_t seed = 0) {
  TrainConfig c;
  c.batch_size = 12;
  c.epochs = 2;
  c.seed = seed;
  return c;
}

Dataset tiny_data(std::size_t n, std::uint64_t seed = 0) {
  DatasetSpec spec;
  spec.train_size = n;
  spec.test_size = 3;
  spec.seed = seed;
  return make_synthetic(spec).first;
}

Batch first_batch(const Dataset& data, const TrainConfig& config) {
  BatchIterator it(data, config.batch_options(), config.seed);
  it.start_epoch(0);
  return *it.next();
}

}  // namespace

TEST_CASE("config: defaults and validation") {
  const TrainConfig c;
  CHECK(c.weights.alpha == 0.5);
  CHECK(c.weights.beta == 0.3);
  CHECK(c.concentration == 1.0);
  CHECK(c.per_set == 3);
  CHECK(c.layer == 3);
  CHECK(c.xi_start == 0.999);
  CHECK(c.classifier_steps == 1);
  CHECK(c.generator_steps == 1);
  CHECK(c.generator_lr == doctest::Approx(c.lr / 10.0));
  CHECK_NOTHROW(c.validate(ArchDescriptor{}));

  TrainConfig bad = c;
  bad.per_set = 1;
  CHECK_THROWS_AS(bad.validate(ArchDescriptor{}), Error);
  bad = c;
  bad.mode = TrainMode::InputMixup;
  CHECK_THROWS_AS(bad.validate(ArchDescriptor{}), Error);
  bad.per_set = 2;
  CHECK_NOTHROW(bad.validate(ArchDescriptor{}));
  bad = c;
  bad.layer = 5;
  CHECK_THROWS_AS(bad.validate(ArchDescriptor{}), Error);
  bad = c;
  bad.generator_lr = 0.0;
  CHECK_THROWS_AS(bad.validate(ArchDescriptor{}), Error);

  CHECK(parse_mode("vanilla") == TrainMode::Vanilla);
  CHECK(mode_name(parse_mode("input-mixup")) == "input-mixup");
  CHECK_THROWS_AS(parse_mode("cutmix"), Error);
}

TEST_CASE("classifier lr follows a cosine over epochs") {
  TrainConfig c;
  c.lr = 0.1;
  c.epochs = 10;
  CHECK(classifier_lr(c, 0) == 0.1);
  CHECK(classifier_lr(c, 5) == doctest::Approx(0.05).epsilon(1e-12));
  for (std::size_t e = 1; e < 10; ++e) CHECK(classifier_lr(c, e) < classifier_lr(c, e - 1));
}

TEST_CASE("sgd: momentum and weight decay") {
  Tensor p = Tensor::from({2}, {1.0, -2.0}, true);
  Sgd sgd(0.9, 0.1);
  ops::sum(ops::scale(p, 3.0)).backward();  // grad 3
  sgd.step({p}, 0.5);
  // buf = 3 + 0.1 * p; p -= 0.5 * buf
  CHECK(p.at(0) == doctest::Approx(1.0 - 0.5 * 3.1));
  CHECK(p.at(1) == doctest::Approx(-2.0 - 0.5 * 2.8));
  const double p0 = p.at(0);
  sgd.step({p}, 0.5);  // grad still 3; buf = 0.9 * 3.1 + 3 + 0.1 * p0
  CHECK(p.at(0) == doctest::Approx(p0 - 0.5 * (0.9 * 3.1 + 3.0 + 0.1 * p0)));
}

TEST_CASE("isolation: steps touch only their own parameters") {
  const Dataset data = tiny_data(12);
  const TrainConfig config = tiny_config();
  ModelState state(tiny_arch(), config);
  const Batch batch = first_batch(data, config);
  const MixBatch mix{batch.images, batch.sets, batch.labels, 3};
  const Tensor features = batch_features(state, batch.images, config);

  for (int round = 0; round < 3; ++round) {
    Snapshots before = snapshot_all(state);
    LossReport report;
    classifier_step(state, mix, generate_detached(state, batch, features), config, 0.1, report);
    Snapshots after = snapshot_all(state);
    CHECK(after.net != before.net);
    CHECK(after.theta == before.theta);
    CHECK(after.teacher == before.teacher);
    CHECK(after.encoder == before.encoder);

    before = after;
    generator_step(state, mix, features, config, 0.01, report);
    after = snapshot_all(state);
    CHECK(after.theta != before.theta);
    CHECK(after.net == before.net);
    CHECK(after.teacher == before.teacher);
    CHECK(after.encoder == before.encoder);
  }
}

TEST_CASE("isolation: zero rates leave parameters exactly unchanged") {
  const Dataset data = tiny_data(12);
  TrainConfig config = tiny_config();
  ModelState state(tiny_arch(), config);
  const Batch batch = first_batch(data, config);
  const MixBatch mix{batch.images, batch.sets, batch.labels, 3};
  const Tensor features = batch_features(state, batch.images, config);
  LossReport report;

  const Snapshot w = snapshot(state.net.parameters());
  classifier_step(state, mix, generate_detached(state, batch, features), config, 0.0, report);
  CHECK(snapshot(state.net.parameters()) == w);

  const Snapshot theta = snapshot(state.theta.parameters());
  generator_step(state, mix, features, config, 0.0, report);
  CHECK(snapshot(state.theta.parameters()) == theta);
}

TEST_CASE("ema: teacher and encoder move by exact convex combinations") {
  const Dataset data = tiny_data(12);
  const TrainConfig config = tiny_config();
  ModelState state(tiny_arch(), config);
  const Batch batch = first_batch(data, config);
  // Move W away from the teacher first.
  train_batch(state, batch, 3, config, 0, 10);

  const Snapshot teacher = snapshot(state.teacher.parameters());
  const Snapshot encoder = snapshot(state.encoder.parameters());
  const TrainLogRow row = train_batch(state, batch, 3, config, 0, 10);
  const Snapshot w = snapshot(state.net.parameters());
  CHECK(row.xi == xi_at({config.xi_start, 10}, 1));

  const Snapshot teacher_after = snapshot(state.teacher.parameters());
  for (std::size_t i = 0; i < teacher.size(); ++i)
    for (std::size_t k = 0; k < teacher[i].size(); ++k) {
      const double t = teacher[i][k], s = w[i][k];
      const double expected =
          std::clamp(row.xi * t + (1.0 - row.xi) * s, std::min(t, s), std::max(t, s));
      CHECK(teacher_after[i][k] == expected);
    }
  const Snapshot encoder_after = snapshot(state.encoder.parameters());
  REQUIRE(encoder_after.size() == state.net.prefix_parameter_count(config.layer));
  for (std::size_t i = 0; i < encoder.size(); ++i)
    for (std::size_t k = 0; k < encoder[i].size(); ++k) {
      const double t = encoder[i][k], s = w[i][k];
      CHECK(encoder_after[i][k] >= std::min(t, s));
      CHECK(encoder_after[i][k] <= std::max(t, s));
      CHECK(encoder_after[i][k] == doctest::Approx(row.xi * t + (1.0 - row.xi) * s));
    }
}

TEST_CASE("directionality: classifier descent on a fixed batch") {
  std::size_t passed = 0;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const Dataset data = tiny_data(12, seed);
    TrainConfig config = tiny_config(seed);
    config.momentum = 0.0;
    ModelState state(tiny_arch(), config);
    const Batch batch = first_batch(data, config);
    const MixBatch mix{batch.images, batch.sets, batch.labels, 3};
    const Tensor x_mix = generate_detached(state, batch, batch_features(state, batch.images, config));
    std::vector<double> losses;
    for (int t = 0; t < 6; ++t) {
      LossReport report;
      classifier_step(state, mix, x_mix, config, 1e-4, report);
      losses.push_back(report.classifier_total);
    }
    bool decreasing = true;
    for (std::size_t t = 1; t < losses.size(); ++t) decreasing &= losses[t] < losses[t - 1];
    passed += decreasing;
  }
  CHECK(passed >= 4);
}

TEST_CASE("directionality: generator ascent on a fixed batch") {
  std::size_t passed = 0;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const Dataset data = tiny_data(12, seed);
    const TrainConfig config = tiny_config(seed);
    ModelState state(tiny_arch(), config);
    const Batch batch = first_batch(data, config);
    const MixBatch mix{batch.images, batch.sets, batch.labels, 3};
    const Tensor features = batch_features(state, batch.images, config);
    std::vector<double> objective;
    for (int t = 0; t < 6; ++t) {
      LossReport report;
      generator_step(state, mix, features, config, 1e-4, report);
      objective.push_back(report.generator_total);
    }
    bool rising = true;
    for (std::size_t t = 1; t < objective.size(); ++t) rising &= objective[t] >= objective[t - 1];
    passed += rising;
  }
  CHECK(passed >= 4);
}

TEST_CASE("train_epoch: mode gates") {
  const Dataset data = tiny_data(24);

  SUBCASE("no generator steps keep theta fixed") {
    TrainConfig config = tiny_config();
    config.generator_steps = 0;
    ModelState state(tiny_arch(), config);
    const Snapshot theta = snapshot(state.theta.parameters());
    const Snapshot teacher = snapshot(state.teacher);
    BatchIterator it(data, config.batch_options(), config.seed);
    const auto rows = train_epoch(state, it, 3, config, 0, 4);
    CHECK(rows.size() == 2);
    CHECK(snapshot(state.theta.parameters()) == theta);
    CHECK(snapshot(state.teacher) != teacher);
  }

  SUBCASE("vanilla leaves the generator and teacher untouched") {
    TrainConfig config = tiny_config();
    config.mode = TrainMode::Vanilla;
    ModelState state(tiny_arch(), config);
    const Snapshot theta = snapshot(state.theta.parameters());
    const Snapshot teacher = snapshot(state.teacher);
    const Snapshot w = snapshot(state.net);
    BatchIterator it(data, config.batch_options(), config.seed);
    const auto rows = train_epoch(state, it, 3, config, 0, 4);
    CHECK(snapshot(state.theta.parameters()) == theta);
    CHECK(snapshot(state.teacher) == teacher);
    CHECK(snapshot(state.net) != w);
    for (const auto& row : rows) CHECK(row.report.generator_total == 0.0);
  }

  SUBCASE("a short batch without sets falls back to plain CE") {
    TrainConfig config = tiny_config();
    ModelState state(tiny_arch(), config);
    const Dataset odd = tiny_data(14);
    BatchIterator it(odd, config.batch_options(), config.seed);
    const auto rows = train_epoch(state, it, 3, config, 0, 4);
    REQUIRE(rows.size() == 2);
    CHECK(rows[0].report.generator_total != 0.0);
    CHECK(rows[1].report.generator_total == 0.0);
    CHECK(rows[1].report.classifier_total > 0.0);
  }
}

TEST_CASE("train_epoch: rows are ordered and runs are deterministic") {
  const Dataset data = tiny_data(24);
  const TrainConfig config = tiny_config(3);
  auto run = [&] {
    ModelState state(tiny_arch(), config);
    BatchIterator it(data, config.batch_options(), config.seed);
    std::vector<TrainLogRow> rows;
    for (std::size_t e = 0; e < 2; ++e) {
      auto part = train_epoch(state, it, 3, config, e, 4);
      rows.insert(rows.end(), part.begin(), part.end());
    }
    return std::make_pair(snapshot_all(state), rows);
  };
  const auto [a, rows] = run();
  const auto [b, rows_b] = run();
  CHECK(a.net == b.net);
  CHECK(a.teacher == b.teacher);
  CHECK(a.encoder == b.encoder);
  CHECK(a.theta == b.theta);
  REQUIRE(rows.size() == 4);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    CHECK(rows[i].step == i);
    CHECK(rows[i].epoch == i / 2);
    CHECK(rows[i].report.classifier_total == rows_b[i].report.classifier_total);
    CHECK(std::isfinite(rows[i].report.generator_total));
    CHECK(rows[i].lr == classifier_lr(config, rows[i].epoch));
  }
  CHECK(rows[3].xi == xi_at({config.xi_start, 4}, 3));
}

TEST_CASE("train_epoch: non-finite batches are skipped, then training aborts") {
  const Dataset data = tiny_data(36);
  TrainConfig config = tiny_config();
  config.max_skips = 3;
  ModelState state(tiny_arch(), config);
  state.net.head_weight().mutable_data()[0] = std::numeric_limits<double>::quiet_NaN();
  BatchIterator it(data, config.batch_options(), config.seed);
  const auto rows = train_epoch(state, it, 3, config, 0, 6);
  REQUIRE(rows.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(rows[i].skipped);
    CHECK(rows[i].step == i);
  }
  CHECK(state.skips == 3);
  CHECK_THROWS_AS(train_epoch(state, it, 3, config, 1, 6), DivergenceError);
}

TEST_CASE("input mixup: ratio 1 reduces to a plain CE step on the first member") {
  const Dataset data = tiny_data(12);
  TrainConfig config = tiny_config();
  config.mode = TrainMode::InputMixup;
  config.per_set = 2;
  config.augment = {};  // the comparison batch is restacked from raw images
  Batch batch = first_batch(data, config);
  REQUIRE(batch.sets.size() == 6);
  for (auto& set : batch.sets) set.ratios = {1.0, 0.0};

  ModelState mixed(tiny_arch(), config);
  LossReport mixed_report;
  baseline_input_mixup_step(mixed, batch, config, 0.1, mixed_report);

  Batch firsts;
  for (const auto& set : batch.sets) {
    firsts.indices.push_back(batch.indices[set.members[0]]);
    firsts.labels.push_back(batch.labels[set.members[0]]);
  }
  firsts.images = data.stack(firsts.indices);
  ModelState plain(tiny_arch(), config);
  LossReport plain_report;
  vanilla_step(plain, firsts, config, 0.1, plain_report);

  CHECK(mixed_report.classifier_total == doctest::Approx(plain_report.classifier_total).epsilon(1e-12));
  const Snapshot a = snapshot(mixed.net.parameters()), b = snapshot(plain.net.parameters());
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t k = 0; k < a[i].size(); ++k)
      CHECK(a[i][k] == doctest::Approx(b[i][k]).epsilon(1e-12));

  TrainConfig triple = tiny_config();
  ModelState state(tiny_arch(), triple);
  CHECK_THROWS_AS(baseline_input_mixup_step(state, first_batch(data, triple), triple, 0.1,
                                            mixed_report),
                  Error);
}
