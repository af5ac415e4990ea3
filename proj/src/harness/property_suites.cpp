#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <random>

#include "adamix/grad_check.hpp"
#include "adamix/mixblock.hpp"
#include "adamix/objectives.hpp"
#include "adamix/ops.hpp"
#include "adamix/property_suite.hpp"
#include "adamix/trainer.hpp"

namespace adamix {

namespace {

Tensor uniform_tensor(const Shape& shape, std::mt19937_64& rng, double lo = 0.0,
                      double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(shape_size(shape));
  for (auto& x : v) x = u(rng);
  return Tensor::from(shape, std::move(v));
}

// Random sets of `per_set` distinct rows covering a batch of k * per_set.
std::vector<MixSet> random_sets(std::size_t k, std::size_t per_set, std::mt19937_64& rng) {
  std::vector<std::size_t> order(k * per_set);
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<MixSet> sets;
  for (std::size_t s = 0; s < k; ++s) {
    MixSet set;
    set.members.assign(order.begin() + long(s * per_set), order.begin() + long((s + 1) * per_set));
    set.ratios = sample_mix_ratios(per_set, 1.0, rng);
    sets.push_back(std::move(set));
  }
  return sets;
}

ArchDescriptor small_arch(ImageShape input) {
  ArchDescriptor d;
  d.input = input;
  d.widths = {8, 12, 16, 32};
  d.blocks_per_stage = 1;
  d.num_classes = 3;
  return d;
}

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

struct Fixture {
  Dataset data;
  TrainConfig config;
  std::unique_ptr<ModelState> state;
  BatchIterator batches;

  Fixture(std::uint64_t seed, std::size_t images)
      : data(make_data(seed, images)),
        config(make_config(seed)),
        state(std::make_unique<ModelState>(small_arch(data.shape), config)),
        batches(data, config.batch_options(), seed) {
    batches.start_epoch(0);
  }

  static Dataset make_data(std::uint64_t seed, std::size_t images) {
    DatasetSpec spec;
    spec.train_size = images;
    spec.test_size = 3;
    spec.seed = seed;
    return make_synthetic(spec).first;
  }
  static TrainConfig make_config(std::uint64_t seed) {
    TrainConfig c;
    c.batch_size = 12;
    c.seed = seed;
    c.momentum = 0.0;
    return c;
  }
};

}  // namespace

std::vector<CheckResult> composite_gradient_suite(std::size_t seeds) {
  constexpr double kThreshold = 1e-4;
  ArchDescriptor arch;
  arch.input = {3, 4, 4};
  arch.widths = {4, 6, 8, 16};
  arch.blocks_per_stage = 1;
  arch.num_classes = 3;
  double classifier_worst = 0.0, generator_worst = 0.0;
  for (std::size_t seed = 0; seed < seeds; ++seed) {
    std::mt19937_64 rng(seed * 104729 + 3);
    Classifier net(arch, seed);
    Classifier teacher = net.clone();
    teacher.set_requires_grad(false);
    EncoderView encoder(net, 2);
    GeneratorParams theta = GeneratorParams::init(arch.stage_channels(2), seed);
    const std::size_t per_set = 2 + seed % 2;
    const Tensor images = uniform_tensor({2 * per_set, 3, 4, 4}, rng);
    std::vector<std::size_t> labels;
    for (std::size_t i = 0; i < 2 * per_set; ++i) labels.push_back(rng() % 3);
    const auto sets = random_sets(2, per_set, rng);
    const MixBatch batch{images, sets, labels, arch.num_classes};
    const LossWeights weights;
    LossReport report;

    Tensor x_mix;
    {
      NoGradGuard no_grad;
      x_mix = generate(images, sets, theta, encoder, 2).mixed;
    }
    // A ReLU kink inside the difference step spoils a central difference
    // but not a smaller one; a wrong gradient disagrees at both.
    const auto check = [](const std::function<Tensor()>& f, const std::vector<Tensor>& params,
                          std::size_t coordinates) {
      double best = 1e300;
      for (double step : {1e-6, 1e-7}) {
        GradCheckOptions options;
        options.eps = step;
        options.max_coordinates = coordinates;
        best = std::min(best, grad_check(f, params, options));
      }
      return best;
    };
    classifier_worst = std::max(classifier_worst, check(
                                                      [&] {
                                                        return batch_classifier_objective(
                                                            net, batch, x_mix, weights,
                                                            ops::BnMode::TrainFrozen, report);
                                                      },
                                                      net.parameters(), 24));
    net.zero_grad();
    generator_worst = std::max(generator_worst, check(
                                                    [&] {
                                                      const Tensor mixed =
                                                          generate(images, sets, theta, encoder, 2)
                                                              .mixed;
                                                      return batch_generator_objective(
                                                          net, teacher, batch, mixed, weights,
                                                          report);
                                                    },
                                                    theta.parameters(), 0));
  }
  return {{"classifier_objective_wrt_W", classifier_worst, kThreshold,
           classifier_worst < kThreshold, ""},
          {"generator_objective_wrt_theta", generator_worst, kThreshold,
           generator_worst < kThreshold, ""}};
}

std::vector<CheckResult> mask_normalization_suite(std::size_t draws) {
  constexpr double kSumTolerance = 1e-5, kConvexTolerance = 1e-6;
  const ArchDescriptor arch = small_arch({3, 8, 8});
  double worst_sum = 0.0, worst_range = 0.0, worst_convex = 0.0;
  for (std::size_t draw = 0; draw < draws; ++draw) {
    std::mt19937_64 rng(draw * 6151 + 11);
    const std::size_t per_set = 2 + draw % 4, k = 2;
    const std::size_t layer = 1 + draw % 3;
    Classifier net(arch, draw);
    EncoderView encoder(net, layer);
    const GeneratorParams theta = GeneratorParams::init(arch.stage_channels(layer), draw + 7);
    const Tensor images = uniform_tensor({k * per_set, 3, 8, 8}, rng);
    const auto sets = random_sets(k, per_set, rng);
    NoGradGuard no_grad;
    const Generated g = generate(images, sets, theta, encoder, layer);
    const std::size_t plane = 8 * 8;
    for (std::size_t s = 0; s < k; ++s)
      for (std::size_t px = 0; px < plane; ++px) {
        double total = 0.0;
        for (std::size_t n = 0; n < per_set; ++n) {
          const double m = g.masks.at((s * per_set + n) * plane + px);
          worst_range = std::max({worst_range, -m, m - 1.0});
          total += m;
        }
        worst_sum = std::max(worst_sum, std::abs(total - 1.0));
        for (std::size_t c = 0; c < 3; ++c) {
          double lo = 1e300, hi = -1e300;
          for (auto member : sets[s].members) {
            const double v = images.at((member * 3 + c) * plane + px);
            lo = std::min(lo, v);
            hi = std::max(hi, v);
          }
          const double x = g.mixed.at((s * 3 + c) * plane + px);
          worst_convex = std::max({worst_convex, lo - x, x - hi});
        }
      }
  }
  return {{"mask_sum_across_N", worst_sum, kSumTolerance, worst_sum < kSumTolerance, ""},
          {"mask_range", std::max(0.0, worst_range), kSumTolerance, worst_range < kSumTolerance,
           ""},
          {"mixed_pixel_convexity", std::max(0.0, worst_convex), kConvexTolerance,
           worst_convex < kConvexTolerance, ""}};
}

std::vector<CheckResult> directionality_suite(std::size_t seeds) {
  constexpr double kRate = 1e-4;
  constexpr std::size_t kSteps = 5;
  std::size_t descent = 0, ascent = 0;
  for (std::size_t seed = 0; seed < seeds; ++seed) {
    Fixture fx(seed, 12);
    ModelState& state = *fx.state;
    const Batch batch = *fx.batches.next();
    const MixBatch mix{batch.images, batch.sets, batch.labels, 3};
    const Tensor features = batch_features(state, batch.images, fx.config);
    const Tensor x_mix = generate_detached(state, batch, features);

    // Objective after t steps is reported by step t + 1.
    std::vector<double> classifier;
    for (std::size_t t = 0; t <= kSteps; ++t) {
      LossReport report;
      classifier_step(state, mix, x_mix, fx.config, kRate, report);
      classifier.push_back(report.classifier_total);
    }
    bool down = true;
    for (std::size_t t = 1; t < classifier.size(); ++t) down &= classifier[t] < classifier[t - 1];
    descent += down;

    std::vector<double> generator, grad_norm;
    for (std::size_t t = 0; t <= kSteps; ++t) {
      LossReport report;
      generator_step(state, mix, features, fx.config, kRate, report);
      generator.push_back(report.generator_total);
      double sq = 0.0;
      for (const auto& p : state.theta.parameters())
        for (double g : p.grad()) sq += g * g;
      grad_norm.push_back(std::sqrt(sq));
    }
    bool up = true;
    for (std::size_t t = 1; t < generator.size(); ++t)
      if (grad_norm[t - 1] > 1e-6) up &= generator[t] >= generator[t - 1];
    ascent += up;
  }
  const double need = std::min<double>(4.0, double(seeds));
  return {{"classifier_descent_seeds", double(descent), need, double(descent) >= need,
           std::to_string(descent) + "/" + std::to_string(seeds)},
          {"generator_ascent_seeds", double(ascent), need, double(ascent) >= need,
           std::to_string(ascent) + "/" + std::to_string(seeds)}};
}

std::vector<CheckResult> isolation_suite(std::size_t batches) {
  std::size_t classifier_leaks = 0, generator_leaks = 0, ema_mismatches = 0;
  Fixture fx(5, 12 * batches);
  ModelState& state = *fx.state;
  TrainConfig config = fx.config;
  config.momentum = 0.9;
  const std::size_t total = batches;
  for (std::size_t b = 0; b < batches; ++b) {
    const Batch batch = *fx.batches.next();
    const MixBatch mix{batch.images, batch.sets, batch.labels, 3};
    const Tensor features = batch_features(state, batch.images, config);
    LossReport report;

    auto theta = snapshot(state.theta.parameters());
    auto teacher = snapshot(state.teacher);
    auto encoder = snapshot(state.encoder.network());
    auto net = snapshot(state.net);
    classifier_step(state, mix, generate_detached(state, batch, features), config, config.lr,
                    report);
    classifier_leaks += snapshot(state.theta.parameters()) != theta;
    classifier_leaks += snapshot(state.teacher) != teacher;
    classifier_leaks += snapshot(state.encoder.network()) != encoder;
    classifier_leaks += snapshot(state.net) == net;  // the step must move W

    net = snapshot(state.net);
    generator_step(state, mix, features, config, config.generator_lr, report);
    generator_leaks += snapshot(state.net) != net;
    generator_leaks += snapshot(state.teacher) != teacher;
    generator_leaks += snapshot(state.encoder.network()) != encoder;
    generator_leaks += snapshot(state.theta.parameters()) == theta;

    const double xi = xi_at({config.xi_start, total}, state.step);
    const auto w = snapshot(state.net.parameters());
    const auto t_before = snapshot(state.teacher.parameters());
    const auto e_before = snapshot(state.encoder.parameters());
    ema_update(state.teacher, state.net, xi);
    state.encoder.ema_from(state.net, xi);
    ++state.step;
    const auto t_after = snapshot(state.teacher.parameters());
    const auto e_after = snapshot(state.encoder.parameters());
    const auto expect = [&](const Snapshot& before, const Snapshot& after) {
      for (std::size_t i = 0; i < after.size(); ++i)
        for (std::size_t k = 0; k < after[i].size(); ++k) {
          const double t = before[i][k], s = w[i][k];
          const double v = std::clamp(xi * t + (1.0 - xi) * s, std::min(t, s), std::max(t, s));
          ema_mismatches += after[i][k] != v;
        }
    };
    expect(t_before, t_after);
    expect(e_before, e_after);
  }
  return {{"classifier_step_isolation", double(classifier_leaks), 0.0, classifier_leaks == 0,
           "changed protected sets"},
          {"generator_step_isolation", double(generator_leaks), 0.0, generator_leaks == 0,
           "changed protected sets"},
          {"ema_convex_combination", double(ema_mismatches), 0.0, ema_mismatches == 0,
           "elementwise mismatches"}};
}

std::vector<CheckResult> property_suites() {
  std::vector<CheckResult> all;
  for (auto part : {operation_gradient_suite(20), composite_gradient_suite(20),
                    mask_normalization_suite(100), directionality_suite(5), isolation_suite(4),
                    metric_oracle_suite()})
    all.insert(all.end(), part.begin(), part.end());
  return all;
}

}  // namespace adamix
