#include "adamix/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <numeric>

namespace adamix {

namespace {
constexpr std::size_t kCifarSide = 32;
constexpr std::size_t kCifarPixels = 3 * kCifarSide * kCifarSide;

std::mt19937_64 seeded(std::uint64_t a, std::uint64_t b) {
  std::seed_seq seq{std::uint32_t(a), std::uint32_t(a >> 32), std::uint32_t(b),
                    std::uint32_t(b >> 32)};
  return std::mt19937_64(seq);
}

// Binary pattern value of class `label` at (y, x).
double pattern(std::size_t label, std::size_t y, std::size_t x, std::size_t height,
               std::size_t width) {
  const std::size_t kind = label % 6;
  const std::size_t freq = 1 + label / 6;
  const std::size_t half = std::max<std::size_t>(2, std::max(height, width) / (2 * freq)) / 2;
  switch (kind) {
    case 0:
      return (y / half) % 2 == 0 ? 1.0 : 0.0;
    case 1:
      return (x / half) % 2 == 0 ? 1.0 : 0.0;
    case 2:
      return ((y / freq + x / freq) % 2) == 0 ? 1.0 : 0.0;
    case 3: {
      const double cy = (double(height) - 1.0) / 2.0;
      const double cx = (double(width) - 1.0) / 2.0;
      const double r = double(std::min(height, width)) / (2.0 + double(freq));
      return std::hypot(double(y) - cy, double(x) - cx) <= r ? 1.0 : 0.0;
    }
    case 4:
      return ((x + y) / half) % 2 == 0 ? 1.0 : 0.0;
    default: {
      const std::size_t border = freq;
      return (y < border || x < border || y + border >= height || x + border >= width) ? 1.0
                                                                                       : 0.0;
    }
  }
}

LabeledImage synthetic_image(std::size_t label, const ImageShape& shape, double noise,
                             std::mt19937_64& rng) {
  std::normal_distribution<double> gauss(0.0, 1.0);
  LabeledImage img;
  img.label = label;
  img.pixels.resize(shape.size());
  for (std::size_t c = 0; c < shape.channels; ++c) {
    // Per-channel contrast depends on the class so colour carries signal too.
    const double gain = shape.channels == 1 ? 1.0 : 0.5 + 0.5 * double((label + c) % 2);
    for (std::size_t y = 0; y < shape.height; ++y)
      for (std::size_t x = 0; x < shape.width; ++x) {
        double v = 0.2 + 0.6 * gain * pattern(label, y, x, shape.height, shape.width);
        if (noise > 0.0) v += noise * gauss(rng);
        img.pixels[(c * shape.height + y) * shape.width + x] = std::clamp(v, 0.0, 1.0);
      }
  }
  return img;
}

Dataset synthetic_split(const DatasetSpec& spec, std::size_t count, std::uint64_t stream) {
  Dataset ds;
  ds.shape = spec.shape;
  ds.num_classes = spec.num_classes;
  auto rng = seeded(spec.seed, stream);
  ds.images.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    ds.images.push_back(synthetic_image(i % spec.num_classes, spec.shape, spec.noise, rng));
  }
  return ds;
}
}  // namespace

Tensor Dataset::stack(const std::vector<std::size_t>& indices) const {
  std::vector<double> values;
  values.reserve(indices.size() * shape.size());
  for (auto i : indices) {
    const auto& px = images.at(i).pixels;
    values.insert(values.end(), px.begin(), px.end());
  }
  return Tensor::from({indices.size(), shape.channels, shape.height, shape.width},
                      std::move(values));
}

std::vector<LabeledImage> load_cifar_binary(const std::string& path, std::size_t num_classes,
                                            bool coarse_label_byte) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("load_cifar_binary: cannot open " + path);
  const std::vector<unsigned char> bytes{std::istreambuf_iterator<char>(in),
                                         std::istreambuf_iterator<char>()};
  const std::size_t header = coarse_label_byte ? 2 : 1;
  const std::size_t record = header + kCifarPixels;
  if (bytes.size() % record != 0) {
    throw Error("load_cifar_binary: " + path + " is truncated; last record starts at byte " +
                std::to_string(bytes.size() - bytes.size() % record));
  }
  std::vector<LabeledImage> images;
  images.reserve(bytes.size() / record);
  for (std::size_t offset = 0; offset < bytes.size(); offset += record) {
    const std::size_t label_offset = offset + header - 1;
    const std::size_t label = bytes[label_offset];
    if (label >= num_classes) {
      throw Error("load_cifar_binary: label " + std::to_string(label) + " at byte offset " +
                  std::to_string(label_offset) + " is outside [0, " +
                  std::to_string(num_classes) + ")");
    }
    LabeledImage img;
    img.label = label;
    img.pixels.resize(kCifarPixels);
    for (std::size_t i = 0; i < kCifarPixels; ++i) {
      img.pixels[i] = double(bytes[offset + header + i]) / 255.0;
    }
    images.push_back(std::move(img));
  }
  return images;
}

void save_cifar_binary(const std::string& path, const std::vector<LabeledImage>& images,
                       bool coarse_label_byte) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("save_cifar_binary: cannot open " + path);
  for (const auto& img : images) {
    if (img.pixels.size() != kCifarPixels) {
      throw Error("save_cifar_binary: images must be 3x32x32");
    }
    if (coarse_label_byte) out.put(0);
    out.put(char(img.label));
    for (double v : img.pixels) {
      out.put(char(static_cast<unsigned char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0))));
    }
  }
  if (!out) throw Error("save_cifar_binary: write failed for " + path);
}

std::pair<Dataset, Dataset> make_synthetic(const DatasetSpec& spec) {
  if (spec.num_classes < 2) throw Error("make_synthetic: need at least 2 classes");
  if (spec.train_size == 0 || spec.test_size == 0) {
    throw Error("make_synthetic: split sizes must be positive");
  }
  if (spec.shape.size() == 0) throw Error("make_synthetic: empty image shape");
  return {synthetic_split(spec, spec.train_size, 1), synthetic_split(spec, spec.test_size, 2)};
}

std::pair<Dataset, Dataset> load_dataset(const DatasetSpec& spec) {
  if (spec.source == DataSource::Synthetic) return make_synthetic(spec);
  auto load = [&](const std::string& path, std::size_t limit) {
    Dataset ds;
    ds.shape = {3, kCifarSide, kCifarSide};
    ds.num_classes = spec.num_classes;
    ds.images = load_cifar_binary(path, spec.num_classes, spec.coarse_label_byte);
    if (limit > 0 && ds.images.size() > limit) ds.images.resize(limit);
    return ds;
  };
  return {load(spec.train_path, spec.train_size), load(spec.test_path, spec.test_size)};
}

std::vector<double> sample_mix_ratios(std::size_t n, double concentration, std::mt19937_64& rng) {
  if (n == 0) throw Error("sample_mix_ratios: n must be at least 1");
  if (!(concentration > 0.0)) {
    throw Error("sample_mix_ratios: concentration must be positive, got " +
                std::to_string(concentration));
  }
  if (n == 1) return {1.0};
  std::gamma_distribution<double> gamma(concentration, 1.0);
  std::vector<double> ratios(n);
  double total = 0.0;
  for (auto& r : ratios) total += (r = gamma(rng));
  if (total <= 0.0) {
    // Every draw underflowed (tiny concentration): the limit law is a vertex.
    std::uniform_int_distribution<std::size_t> pick(0, n - 1);
    std::fill(ratios.begin(), ratios.end(), 0.0);
    ratios[pick(rng)] = 1.0;
    return ratios;
  }
  for (auto& r : ratios) r /= total;
  return ratios;
}

void flip_horizontal(std::span<double> pixels, const ImageShape& shape) {
  for (std::size_t c = 0; c < shape.channels; ++c)
    for (std::size_t y = 0; y < shape.height; ++y) {
      auto row = pixels.begin() + long((c * shape.height + y) * shape.width);
      std::reverse(row, row + long(shape.width));
    }
}

void pad_crop(std::span<double> pixels, const ImageShape& shape, std::size_t pad,
              std::size_t dy, std::size_t dx) {
  if (dy > 2 * pad || dx > 2 * pad) throw Error("pad_crop: offset outside padded frame");
  std::vector<double> out(pixels.size(), 0.0);
  for (std::size_t c = 0; c < shape.channels; ++c)
    for (std::size_t y = 0; y < shape.height; ++y)
      for (std::size_t x = 0; x < shape.width; ++x) {
        const long sy = long(y + dy) - long(pad);
        const long sx = long(x + dx) - long(pad);
        if (sy < 0 || sx < 0 || sy >= long(shape.height) || sx >= long(shape.width)) continue;
        out[(c * shape.height + y) * shape.width + x] =
            pixels[(c * shape.height + std::size_t(sy)) * shape.width + std::size_t(sx)];
      }
  std::copy(out.begin(), out.end(), pixels.begin());
}

BatchIterator::BatchIterator(const Dataset& dataset, BatchOptions options, std::uint64_t seed)
    : dataset_(&dataset), options_(options), seed_(seed) {
  if (options_.per_set == 0) throw Error("BatchIterator: images per set must be positive");
  if (options_.batch_size < options_.per_set) {
    throw Error("BatchIterator: batch size " + std::to_string(options_.batch_size) +
                " is smaller than images per set " + std::to_string(options_.per_set));
  }
  if (options_.sets_per_batch * options_.per_set > options_.batch_size) {
    throw Error("BatchIterator: K * N exceeds the batch size");
  }
  start_epoch(0);
}

void BatchIterator::start_epoch(std::size_t epoch) {
  rng_ = seeded(seed_, epoch);
  order_.resize(dataset_->size());
  std::iota(order_.begin(), order_.end(), std::size_t{0});
  std::shuffle(order_.begin(), order_.end(), rng_);
  cursor_ = 0;
}

std::size_t BatchIterator::batches_per_epoch() const {
  return (dataset_->size() + options_.batch_size - 1) / options_.batch_size;
}

std::optional<Batch> BatchIterator::next() {
  if (cursor_ >= order_.size()) return std::nullopt;
  const std::size_t count = std::min(options_.batch_size, order_.size() - cursor_);
  Batch batch;
  batch.indices.assign(order_.begin() + long(cursor_), order_.begin() + long(cursor_ + count));
  cursor_ += count;

  const ImageShape& shape = dataset_->shape;
  std::vector<double> pixels;
  pixels.reserve(count * shape.size());
  std::bernoulli_distribution coin(0.5);
  std::uniform_int_distribution<std::size_t> offset(0, 2 * options_.augment.crop_pad);
  for (auto idx : batch.indices) {
    const auto& img = dataset_->images[idx];
    std::vector<double> px = img.pixels;
    if (options_.augment.flip && coin(rng_)) flip_horizontal(px, shape);
    if (options_.augment.crop) {
      const std::size_t dy = offset(rng_);
      const std::size_t dx = offset(rng_);
      pad_crop(px, shape, options_.augment.crop_pad, dy, dx);
    }
    pixels.insert(pixels.end(), px.begin(), px.end());
    batch.labels.push_back(img.label);
  }
  batch.images = Tensor::from({count, shape.channels, shape.height, shape.width}, std::move(pixels));

  const std::size_t n = options_.per_set;
  std::size_t sets = count / n;
  if (options_.sets_per_batch > 0) sets = std::min(sets, options_.sets_per_batch);
  for (std::size_t k = 0; k < sets; ++k) {
    MixSet set;
    for (std::size_t j = 0; j < n; ++j) set.members.push_back(k * n + j);
    set.ratios = sample_mix_ratios(n, options_.concentration, rng_);
    batch.sets.push_back(std::move(set));
  }
  return batch;
}

}  // namespace adamix
