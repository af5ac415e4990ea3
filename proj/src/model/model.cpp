#include "adamix/model.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace adamix {

namespace {
std::size_t halve(std::size_t n) { return (n + 1) / 2; }

void copy_values(Tensor& dst, const Tensor& src) {
  if (dst.shape() != src.shape()) {
    throw Error("parameter shape mismatch " + shape_str(dst.shape()) + " vs " +
                shape_str(src.shape()));
  }
  std::copy(src.data().begin(), src.data().end(), dst.mutable_data().begin());
}
}  // namespace

std::size_t ArchDescriptor::stage_channels(std::size_t stage) const {
  if (stage == 0 || stage > widths.size()) {
    throw Error("stage " + std::to_string(stage) + " outside [1, " +
                std::to_string(widths.size()) + "]");
  }
  return widths[stage - 1];
}

std::size_t ArchDescriptor::stage_height(std::size_t stage) const {
  stage_channels(stage);
  std::size_t h = input.height;
  for (std::size_t s = 2; s <= stage; ++s) h = halve(h);
  return h;
}

std::size_t ArchDescriptor::stage_width(std::size_t stage) const {
  stage_channels(stage);
  std::size_t w = input.width;
  for (std::size_t s = 2; s <= stage; ++s) w = halve(w);
  return w;
}

void ArchDescriptor::validate() const {
  if (widths.empty()) throw Error("architecture needs at least one stage");
  if (std::find(widths.begin(), widths.end(), 0u) != widths.end()) {
    throw Error("architecture stage widths must be positive");
  }
  if (blocks_per_stage == 0) throw Error("architecture needs at least one block per stage");
  if (num_classes < 2) throw Error("architecture needs at least two classes");
  if (input.size() == 0) throw Error("architecture input shape is empty");
}

Classifier::ConvBn Classifier::make_conv_bn(std::size_t in, std::size_t out, std::size_t kernel,
                                            std::size_t stride, std::mt19937_64& rng) {
  ConvBn layer;
  std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / double(in * kernel * kernel)));
  std::vector<double> w(out * in * kernel * kernel);
  for (auto& v : w) v = dist(rng);
  layer.weight = Tensor::from({out, in, kernel, kernel}, std::move(w), true);
  layer.gamma = Tensor::full({out}, 1.0, true);
  layer.beta = Tensor::zeros({out}, true);
  layer.stats.running_mean.assign(out, 0.0);
  layer.stats.running_var.assign(out, 1.0);
  layer.stride = stride;
  layer.pad = kernel / 2;
  return layer;
}

Classifier::Classifier(ArchDescriptor descriptor, std::uint64_t seed)
    : descriptor_(std::move(descriptor)) {
  descriptor_.validate();
  std::mt19937_64 rng(seed);
  stem_ = make_conv_bn(descriptor_.input.channels, descriptor_.widths[0], 3, 1, rng);
  std::size_t in = descriptor_.widths[0];
  for (std::size_t s = 0; s < descriptor_.stage_count(); ++s) {
    std::vector<Block> blocks;
    const std::size_t out = descriptor_.widths[s];
    for (std::size_t b = 0; b < descriptor_.blocks_per_stage; ++b) {
      const std::size_t stride = (b == 0 && s > 0) ? 2 : 1;
      Block block;
      block.conv1 = make_conv_bn(in, out, 3, stride, rng);
      block.conv2 = make_conv_bn(out, out, 3, 1, rng);
      if (stride != 1 || in != out) block.shortcut = make_conv_bn(in, out, 1, stride, rng);
      blocks.push_back(std::move(block));
      in = out;
    }
    stages_.push_back(std::move(blocks));
  }
  const std::size_t dim = descriptor_.feature_dim();
  const double bound = 1.0 / std::sqrt(double(dim));
  std::uniform_real_distribution<double> uni(-bound, bound);
  std::vector<double> hw(descriptor_.num_classes * dim);
  for (auto& v : hw) v = uni(rng);
  head_weight_ = Tensor::from({descriptor_.num_classes, dim}, std::move(hw), true);
  head_bias_ = Tensor::zeros({descriptor_.num_classes}, true);
}

Classifier Classifier::clone() const {
  Classifier copy(descriptor_, 0);
  copy.copy_from(*this);
  return copy;
}

void Classifier::copy_from(const Classifier& other) {
  if (!(descriptor_ == other.descriptor_)) throw Error("copy_from: architecture mismatch");
  auto dst = parameters();
  const auto src = other.parameters();
  for (std::size_t i = 0; i < dst.size(); ++i) copy_values(dst[i], src[i]);
  auto dst_stats = batch_norm_stats();
  const auto src_stats = other.batch_norm_stats();
  for (std::size_t i = 0; i < dst_stats.size(); ++i) *dst_stats[i] = *src_stats[i];
}

std::vector<Classifier::ConvBn*> Classifier::layer_list(std::size_t stages) const {
  auto* self = const_cast<Classifier*>(this);
  std::vector<ConvBn*> out{&self->stem_};
  for (std::size_t s = 0; s < std::min(stages, stages_.size()); ++s) {
    for (auto& block : self->stages_[s]) {
      out.push_back(&block.conv1);
      out.push_back(&block.conv2);
      if (block.shortcut) out.push_back(&*block.shortcut);
    }
  }
  return out;
}

std::vector<Tensor> Classifier::parameters() const {
  std::vector<Tensor> params;
  for (auto* layer : layer_list(stages_.size())) {
    params.push_back(layer->weight);
    params.push_back(layer->gamma);
    params.push_back(layer->beta);
  }
  params.push_back(head_weight_);
  params.push_back(head_bias_);
  return params;
}

std::size_t Classifier::prefix_parameter_count(std::size_t stage) const {
  descriptor_.stage_channels(stage);
  return 3 * layer_list(stage).size();
}

std::vector<ops::BatchNormStats*> Classifier::batch_norm_stats() {
  std::vector<ops::BatchNormStats*> out;
  for (auto* layer : layer_list(stages_.size())) out.push_back(&layer->stats);
  return out;
}

std::vector<const ops::BatchNormStats*> Classifier::batch_norm_stats() const {
  std::vector<const ops::BatchNormStats*> out;
  for (auto* layer : layer_list(stages_.size())) out.push_back(&layer->stats);
  return out;
}

std::size_t Classifier::prefix_batch_norm_count(std::size_t stage) const {
  descriptor_.stage_channels(stage);
  return layer_list(stage).size();
}

void Classifier::set_requires_grad(bool flag) {
  for (auto& p : parameters()) p.set_requires_grad(flag);
}

void Classifier::zero_grad() {
  for (auto& p : parameters()) p.zero_grad();
}

void Classifier::check_input(const Tensor& x) const {
  const auto& in = descriptor_.input;
  if (x.rank() != 4 || x.dim(1) != in.channels || x.dim(2) != in.height || x.dim(3) != in.width) {
    throw Error("classifier input " + shape_str(x.shape()) + " does not match [B," +
                std::to_string(in.channels) + "," + std::to_string(in.height) + "," +
                std::to_string(in.width) + "]");
  }
}

Tensor Classifier::apply(ConvBn& layer, const Tensor& x, ops::BnMode mode, bool relu) {
  Tensor y = ops::conv2d(x, layer.weight, layer.stride, layer.pad);
  y = ops::batch_norm(y, layer.gamma, layer.beta, layer.stats, mode);
  return relu ? ops::relu(y) : y;
}

Tensor Classifier::run_block(Block& block, const Tensor& x, ops::BnMode mode) {
  Tensor h = apply(block.conv1, x, mode, true);
  h = apply(block.conv2, h, mode, false);
  Tensor skip = block.shortcut ? apply(*block.shortcut, x, mode, false) : x;
  return ops::relu(ops::add(h, skip));
}

Tensor Classifier::run_stages(const Tensor& x, std::size_t stages, ops::BnMode mode) {
  check_input(x);
  Tensor h = apply(stem_, x, mode, true);
  for (std::size_t s = 0; s < stages; ++s)
    for (auto& block : stages_[s]) h = run_block(block, h, mode);
  return h;
}

Classifier::Outputs Classifier::forward_full(const Tensor& x, ops::BnMode mode) {
  Tensor features = ops::global_avg_pool(run_stages(x, stages_.size(), mode));
  Tensor logits = ops::linear(features, head_weight_, head_bias_);
  return {features, logits};
}

Tensor Classifier::forward(const Tensor& x, ops::BnMode mode) {
  return forward_full(x, mode).logits;
}

Tensor Classifier::stage_features(const Tensor& x, std::size_t stage, ops::BnMode mode) {
  descriptor_.stage_channels(stage);
  return run_stages(x, stage, mode);
}

void ema_update(std::span<Tensor> target, std::span<const Tensor> source, double xi) {
  if (!(xi >= 0.0 && xi <= 1.0)) throw Error("ema_update: xi must lie in [0, 1]");
  if (target.size() != source.size()) throw Error("ema_update: parameter count mismatch");
  for (std::size_t i = 0; i < target.size(); ++i) {
    if (target[i].shape() != source[i].shape()) {
      throw Error("ema_update: shape mismatch " + shape_str(target[i].shape()) + " vs " +
                  shape_str(source[i].shape()));
    }
  }
  for (std::size_t i = 0; i < target.size(); ++i) {
    auto t = target[i].mutable_data();
    const auto s = source[i].data();
    for (std::size_t k = 0; k < t.size(); ++k) {
      const double v = xi * t[k] + (1.0 - xi) * s[k];
      t[k] = std::clamp(v, std::min(t[k], s[k]), std::max(t[k], s[k]));
    }
  }
}

void ema_update(Classifier& target, const Classifier& source, double xi) {
  if (!(target.descriptor() == source.descriptor())) {
    throw Error("ema_update: architecture mismatch");
  }
  auto dst = target.parameters();
  const auto src = source.parameters();
  ema_update(std::span<Tensor>(dst), std::span<const Tensor>(src), xi);
  auto dst_stats = target.batch_norm_stats();
  const auto src_stats = source.batch_norm_stats();
  for (std::size_t i = 0; i < dst_stats.size(); ++i) *dst_stats[i] = *src_stats[i];
}

EncoderView::EncoderView(const Classifier& source, std::size_t layers)
    : network_(source.clone()), layers_(layers) {
  source.descriptor().stage_channels(layers);
  network_.set_requires_grad(false);
}

std::vector<Tensor> EncoderView::parameters() const {
  auto all = network_.parameters();
  all.resize(network_.prefix_parameter_count(layers_));
  return all;
}

void EncoderView::ema_from(const Classifier& source, double xi) {
  if (!(network_.descriptor() == source.descriptor())) {
    throw Error("EncoderView: architecture mismatch");
  }
  auto dst = parameters();
  auto src = source.parameters();
  src.resize(dst.size());
  ema_update(std::span<Tensor>(dst), std::span<const Tensor>(src), xi);
  auto dst_stats = network_.batch_norm_stats();
  const auto src_stats = source.batch_norm_stats();
  const std::size_t count = network_.prefix_batch_norm_count(layers_);
  for (std::size_t i = 0; i < count; ++i) *dst_stats[i] = *src_stats[i];
}

Tensor encoder_features(EncoderView& encoder, const Tensor& x, std::size_t layer) {
  if (layer == 0 || layer > encoder.layers()) {
    throw Error("encoder_features: layer " + std::to_string(layer) + " outside [1, " +
                std::to_string(encoder.layers()) + "]");
  }
  NoGradGuard no_grad;
  return encoder.network().stage_features(x, layer, ops::BnMode::Eval);
}

double xi_at(const XiSchedule& schedule, std::size_t step) {
  if (schedule.total_steps == 0 || step >= schedule.total_steps) return 1.0;
  const double phase = std::numbers::pi * double(step) / double(schedule.total_steps);
  return 1.0 - (1.0 - schedule.xi_start) * (1.0 + std::cos(phase)) / 2.0;
}

}  // namespace adamix
