#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "adamix/data.hpp"
#include "adamix/ops.hpp"
#include "adamix/tensor.hpp"

namespace adamix {

/// Residual CNN layout: a 3x3 stem, then one stage per entry of `widths`
/// (stage 1 keeps resolution, later stages halve it), global pooling and a
/// linear head.
struct ArchDescriptor {
  ImageShape input{};
  std::vector<std::size_t> widths{16, 32, 64, 128};
  std::size_t blocks_per_stage = 2;
  std::size_t num_classes = 3;

  std::size_t stage_count() const { return widths.size(); }
  /// Channels and spatial size of the output of stage `stage` (1-based).
  std::size_t stage_channels(std::size_t stage) const;
  std::size_t stage_height(std::size_t stage) const;
  std::size_t stage_width(std::size_t stage) const;
  std::size_t feature_dim() const { return widths.back(); }
  void validate() const;
  bool operator==(const ArchDescriptor&) const = default;
};

class Classifier {
 public:
  struct Outputs {
    Tensor features;  // pooled penultimate representation [B, feature_dim]
    Tensor logits;    // [B, num_classes]
  };

  Classifier(ArchDescriptor descriptor, std::uint64_t seed);
  Classifier(const Classifier&) = delete;
  Classifier& operator=(const Classifier&) = delete;
  Classifier(Classifier&&) = default;
  Classifier& operator=(Classifier&&) = default;

  /// Independent deep copy (parameters and batch-norm statistics).
  Classifier clone() const;
  /// Copies parameter values and statistics from a same-shaped classifier.
  void copy_from(const Classifier& other);

  const ArchDescriptor& descriptor() const { return descriptor_; }

  Tensor forward(const Tensor& x, ops::BnMode mode);
  Outputs forward_full(const Tensor& x, ops::BnMode mode);
  /// Output of stage `stage` (1-based) for x [B,C,H,W].
  Tensor stage_features(const Tensor& x, std::size_t stage, ops::BnMode mode);

  /// Parameters in a fixed order: stem, stage 1 ... stage S, head.
  std::vector<Tensor> parameters() const;
  /// Number of leading entries of parameters() that belong to the stem and
  /// stages 1..stage.
  std::size_t prefix_parameter_count(std::size_t stage) const;
  std::vector<ops::BatchNormStats*> batch_norm_stats();
  std::vector<const ops::BatchNormStats*> batch_norm_stats() const;
  std::size_t prefix_batch_norm_count(std::size_t stage) const;

  Tensor& head_weight() { return head_weight_; }
  Tensor& head_bias() { return head_bias_; }

  void set_requires_grad(bool flag);
  void zero_grad();

 private:
  struct ConvBn {
    Tensor weight;
    Tensor gamma;
    Tensor beta;
    ops::BatchNormStats stats;
    std::size_t stride = 1;
    std::size_t pad = 1;
  };
  struct Block {
    ConvBn conv1;
    ConvBn conv2;
    std::optional<ConvBn> shortcut;
  };

  static ConvBn make_conv_bn(std::size_t in, std::size_t out, std::size_t kernel,
                             std::size_t stride, std::mt19937_64& rng);
  Tensor apply(ConvBn& layer, const Tensor& x, ops::BnMode mode, bool relu);
  Tensor run_block(Block& block, const Tensor& x, ops::BnMode mode);
  Tensor run_stages(const Tensor& x, std::size_t stages, ops::BnMode mode);
  void check_input(const Tensor& x) const;

  // Conv/BN layers of the stem and stages 1..stages, in parameter order.
  std::vector<ConvBn*> layer_list(std::size_t stages) const;

  ArchDescriptor descriptor_;
  ConvBn stem_;
  std::vector<std::vector<Block>> stages_;
  Tensor head_weight_;
  Tensor head_bias_;
};

/// target <- xi * target + (1 - xi) * source, elementwise. Each result is
/// clamped into [min(target, source), max(target, source)] so rounding never
/// leaves the segment.
void ema_update(std::span<Tensor> target, std::span<const Tensor> source, double xi);

/// EMA of the full classifier; batch-norm statistics are copied.
void ema_update(Classifier& target, const Classifier& source, double xi);

/// Frozen copy of the classifier's first `layers` stages (plus stem) that
/// only moves by EMA.
class EncoderView {
 public:
  EncoderView(const Classifier& source, std::size_t layers);

  std::size_t layers() const { return layers_; }
  Classifier& network() { return network_; }
  const Classifier& network() const { return network_; }
  /// The encoder's own parameters (the classifier prefix).
  std::vector<Tensor> parameters() const;

  /// EMA of the prefix parameters toward `source`; statistics are copied.
  void ema_from(const Classifier& source, double xi);

 private:
  Classifier network_;
  std::size_t layers_;
};

/// Stage-`layer` feature map of x, computed without gradient and with
/// running batch-norm statistics.
Tensor encoder_features(EncoderView& encoder, const Tensor& x, std::size_t layer);

struct XiSchedule {
  double xi_start = 0.999;
  std::size_t total_steps = 1;
};

/// 1 - (1 - xi_start) * (1 + cos(pi * t / T)) / 2; t >= T gives 1.
double xi_at(const XiSchedule& schedule, std::size_t step);

}  // namespace adamix
