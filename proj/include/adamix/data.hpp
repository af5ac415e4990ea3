#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "adamix/tensor.hpp"

namespace adamix {

struct ImageShape {
  std::size_t channels = 3;
  std::size_t height = 8;
  std::size_t width = 8;

  std::size_t size() const { return channels * height * width; }
  bool operator==(const ImageShape&) const = default;
};

/// Pixels are C x H x W row-major, each within [0, 1].
struct LabeledImage {
  std::vector<double> pixels;
  std::size_t label = 0;
};

struct Dataset {
  ImageShape shape;
  std::size_t num_classes = 0;
  std::vector<LabeledImage> images;

  std::size_t size() const { return images.size(); }
  /// Stacks the selected images into [B,C,H,W].
  Tensor stack(const std::vector<std::size_t>& indices) const;
};

enum class DataSource { Synthetic, CifarBinary };

struct DatasetSpec {
  DataSource source = DataSource::Synthetic;
  std::string train_path;  // CIFAR binary files
  std::string test_path;
  bool coarse_label_byte = false;  // CIFAR-100 records carry a leading coarse label
  std::size_t num_classes = 3;
  ImageShape shape{};
  std::size_t train_size = 300;
  std::size_t test_size = 300;
  std::uint64_t seed = 0;
  double noise = 0.15;  // synthetic additive noise amplitude
};

/// CIFAR binary records: [coarse byte] label byte, 3072 pixel bytes (R, G, B
/// planes of 32x32). Pixels are scaled by 1/255.
std::vector<LabeledImage> load_cifar_binary(const std::string& path, std::size_t num_classes,
                                            bool coarse_label_byte = false);
/// Inverse of load_cifar_binary for 3x32x32 images; coarse bytes written as 0.
void save_cifar_binary(const std::string& path, const std::vector<LabeledImage>& images,
                       bool coarse_label_byte = false);

/// Class-conditional geometric patterns plus Gaussian noise; deterministic
/// in spec.seed.
std::pair<Dataset, Dataset> make_synthetic(const DatasetSpec& spec);

/// Dispatches on spec.source; CIFAR train/test sizes are truncated to the spec
/// sizes when those are smaller than the files.
std::pair<Dataset, Dataset> load_dataset(const DatasetSpec& spec);

/// Symmetric Dirichlet(concentration) draw of length n.
std::vector<double> sample_mix_ratios(std::size_t n, double concentration, std::mt19937_64& rng);

struct AugmentOptions {
  bool flip = false;
  bool crop = false;
  std::size_t crop_pad = 4;
};

struct BatchOptions {
  std::size_t batch_size = 100;
  std::size_t per_set = 3;         // N
  std::size_t sets_per_batch = 0;  // K; 0 means floor(B / N)
  double concentration = 1.0;
  AugmentOptions augment{};
};

/// N distinct positions within the batch and their mix ratios.
struct MixSet {
  std::vector<std::size_t> members;
  std::vector<double> ratios;
};

struct Batch {
  std::vector<std::size_t> indices;  // dataset indices
  Tensor images;                     // [B,C,H,W], augmented
  std::vector<std::size_t> labels;
  std::vector<MixSet> sets;
};

/// Seeded per-epoch permutation of a dataset, cut into batches. The last
/// batch of an epoch may be short; its K shrinks accordingly.
class BatchIterator {
 public:
  BatchIterator(const Dataset& dataset, BatchOptions options, std::uint64_t seed);

  void start_epoch(std::size_t epoch);
  std::optional<Batch> next();
  std::size_t batches_per_epoch() const;
  const BatchOptions& options() const { return options_; }

 private:
  const Dataset* dataset_;
  BatchOptions options_;
  std::uint64_t seed_;
  std::mt19937_64 rng_;
  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
};

/// Horizontal flip in place on one C x H x W image.
void flip_horizontal(std::span<double> pixels, const ImageShape& shape);
/// Zero-pads by `pad` and crops back at offset (dy, dx) in [0, 2 pad].
void pad_crop(std::span<double> pixels, const ImageShape& shape, std::size_t pad,
              std::size_t dy, std::size_t dx);

}  // namespace adamix
