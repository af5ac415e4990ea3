#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "adamix/data.hpp"
#include "adamix/mixblock.hpp"
#include "adamix/model.hpp"
#include "adamix/objectives.hpp"

namespace adamix {

enum class TrainMode { AdAutoMix, InputMixup, Vanilla };

std::string mode_name(TrainMode mode);
TrainMode parse_mode(const std::string& name);

struct TrainConfig {
  TrainMode mode = TrainMode::AdAutoMix;
  LossWeights weights{};
  double concentration = 1.0;  // Dirichlet / Beta parameter of the mix ratios
  std::size_t per_set = 3;     // N
  std::size_t sets_per_batch = 0;  // K; 0 means floor(B / N)
  std::size_t batch_size = 100;
  double lr = 0.1;             // classifier rate, cosine-annealed over epochs
  double generator_lr = 0.01;  // ascent rate, constant
  double momentum = 0.9;
  double weight_decay = 1e-4;
  std::size_t classifier_steps = 1;  // T1
  std::size_t generator_steps = 1;   // T2
  std::size_t epochs = 200;
  double xi_start = 0.999;
  std::size_t layer = 3;  // encoder depth l
  std::uint64_t seed = 0;
  std::size_t max_skips = 3;
  AugmentOptions augment{true, true, 4};

  void validate(const ArchDescriptor& arch) const;
  BatchOptions batch_options() const;
};

/// Thrown when more batches fail than TrainConfig::max_skips allows.
class DivergenceError : public Error {
 public:
  using Error::Error;
};

/// SGD with heavy-ball momentum and L2 weight decay:
/// buf = momentum * buf + (g + decay * p); p -= lr * buf.
class Sgd {
 public:
  Sgd(double momentum, double weight_decay) : momentum_(momentum), weight_decay_(weight_decay) {}
  void step(const std::vector<Tensor>& params, double lr);
  std::vector<std::vector<double>>& buffers() { return buffers_; }
  const std::vector<std::vector<double>>& buffers() const { return buffers_; }

 private:
  double momentum_;
  double weight_decay_;
  std::vector<std::vector<double>> buffers_;
};

/// Classifier W, teacher W-hat, encoder phi-hat and generator theta.
struct ModelState {
  ModelState(const ArchDescriptor& arch, const TrainConfig& config);

  Classifier net;
  Classifier teacher;
  EncoderView encoder;
  GeneratorParams theta;
  Sgd optimizer;
  std::size_t step = 0;   // batches completed
  std::size_t skips = 0;  // batches abandoned on a non-finite loss
};

/// Seed of the generator weights, derived from the run seed.
std::uint64_t generator_seed(std::uint64_t seed);

double classifier_lr(const TrainConfig& config, std::size_t epoch);

/// One descent step of the classifier objective on a fixed x_mix.
void classifier_step(ModelState& state, const MixBatch& batch, const Tensor& x_mix,
                     const TrainConfig& config, double lr, LossReport& report);

/// Encoder features of the batch; fixed until the next EMA update.
Tensor batch_features(ModelState& state, const Tensor& images, const TrainConfig& config);

/// One ascent step of the generator objective; x_mix is regenerated from
/// `features` with gradient into theta.
void generator_step(ModelState& state, const MixBatch& batch, const Tensor& features,
                    const TrainConfig& config, double gamma, LossReport& report);

/// Plain CE on the clean batch.
void vanilla_step(ModelState& state, const Batch& batch, const TrainConfig& config, double lr,
                  LossReport& report);

/// CE on the linear pixel mix of each pair with its mixed label.
void baseline_input_mixup_step(ModelState& state, const Batch& batch, const TrainConfig& config,
                               double lr, LossReport& report);

/// Mixed images of the batch under the current theta, without gradient.
Tensor generate_detached(ModelState& state, const Batch& batch, const Tensor& features);

struct TrainLogRow {
  std::size_t epoch = 0;
  std::size_t step = 0;
  LossReport report{};
  double xi = 1.0;
  double lr = 0.0;
  double generator_lr = 0.0;
  double wall_seconds = 0.0;
  bool skipped = false;
};

/// Runs one batch in the configured mode. AdAutoMix: T1 classifier steps,
/// T2 generator steps, then EMA of teacher and encoder.
TrainLogRow train_batch(ModelState& state, const Batch& batch, std::size_t num_classes,
                        const TrainConfig& config, std::size_t epoch, std::size_t total_steps);

/// One pass over the iterator; non-finite batches are skipped until
/// max_skips is exceeded, then DivergenceError is thrown.
std::vector<TrainLogRow> train_epoch(ModelState& state, BatchIterator& batches,
                                     std::size_t num_classes, const TrainConfig& config,
                                     std::size_t epoch, std::size_t total_steps);

}  // namespace adamix
