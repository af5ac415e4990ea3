#include "adamix/mixblock.hpp"

#include <cmath>
#include <random>

#include "adamix/ops.hpp"

namespace adamix {

namespace {
Tensor random_weight(std::size_t out, std::size_t in, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, 1.0 / std::sqrt(double(in)));
  std::vector<double> w(out * in);
  for (auto& v : w) v = dist(rng);
  return Tensor::from({out, in, 1, 1}, std::move(w), true);
}

Tensor copy_param(const Tensor& t) {
  return Tensor::from(t.shape(), {t.data().begin(), t.data().end()}, t.requires_grad());
}
}  // namespace

GeneratorParams GeneratorParams::init(std::size_t feature_channels, std::uint64_t seed) {
  if (feature_channels == 0) throw Error("GeneratorParams: feature channels must be positive");
  std::mt19937_64 rng(seed);
  const std::size_t in = feature_channels + 1;
  const std::size_t d = head_dim(feature_channels);
  GeneratorParams p;
  p.query = random_weight(d, in, rng);
  p.key = random_weight(d, in, rng);
  p.value = random_weight(1, in, rng);
  return p;
}

GeneratorParams GeneratorParams::clone() const {
  return {copy_param(query), copy_param(key), copy_param(value)};
}

void check_simplex(std::span<const double> ratios, double tolerance) {
  if (ratios.empty()) throw Error("mix ratios are empty");
  double total = 0.0;
  for (double r : ratios) {
    if (!(r >= 0.0)) throw Error("mix ratio " + std::to_string(r) + " is negative or NaN");
    total += r;
  }
  if (std::abs(total - 1.0) > tolerance) {
    throw Error("mix ratios sum to " + std::to_string(total) + ", not 1");
  }
}

Tensor embed_ratio(const Tensor& z, std::span<const double> lambdas) {
  if (z.rank() != 4) throw Error("embed_ratio: expected [B,C,h,w], got " + shape_str(z.shape()));
  const std::size_t batch = z.dim(0), h = z.dim(2), w = z.dim(3);
  if (lambdas.size() != batch) throw Error("embed_ratio: one ratio per image required");
  std::vector<double> plane(batch * h * w);
  for (std::size_t b = 0; b < batch; ++b) {
    if (!(lambdas[b] >= 0.0 && lambdas[b] <= 1.0)) {
      throw Error("embed_ratio: ratio " + std::to_string(lambdas[b]) + " outside [0, 1]");
    }
    std::fill(plane.begin() + long(b * h * w), plane.begin() + long((b + 1) * h * w), lambdas[b]);
  }
  return ops::concat({Tensor::from({batch, 1, h, w}, std::move(plane)), z}, 1);
}

Tensor strip_ratio(const Tensor& z_lambda) {
  return ops::slice(z_lambda, 1, 1, z_lambda.dim(1) - 1);
}

AttentionHeads qkv_project(const Tensor& z_lambda, const GeneratorParams& theta) {
  if (z_lambda.rank() != 4 || z_lambda.dim(1) != theta.embedded_channels()) {
    throw Error("qkv_project: input " + shape_str(z_lambda.shape()) + " does not have " +
                std::to_string(theta.embedded_channels()) + " channels");
  }
  const std::size_t batch = z_lambda.dim(0), h = z_lambda.dim(2), w = z_lambda.dim(3);
  const std::size_t d = theta.d();
  AttentionHeads heads;
  heads.q = ops::reshape(ops::conv2d(z_lambda, theta.query, 1, 0), {batch, d, h * w});
  heads.k = ops::reshape(ops::conv2d(z_lambda, theta.key, 1, 0), {batch, d, h * w});
  heads.v = ops::reshape(ops::conv2d(z_lambda, theta.value, 1, 0), {batch, h * w});
  heads.height = h;
  heads.width = w;
  return heads;
}

Tensor cross_attention(const AttentionHeads& heads, std::size_t per_set) {
  if (per_set < 2) throw Error("cross_attention: need at least two images per set");
  const std::size_t rows = heads.q.dim(0);
  if (rows % per_set != 0) {
    throw Error("cross_attention: " + std::to_string(rows) + " rows are not a multiple of N = " +
                std::to_string(per_set));
  }
  const std::size_t sets = rows / per_set;
  const std::size_t d = heads.q.dim(1), wh = heads.q.dim(2);
  if (heads.k.shape() != heads.q.shape() || heads.v.shape() != Shape{rows, wh} ||
      heads.height * heads.width != wh) {
    throw Error("cross_attention: query, key and value shapes disagree");
  }
  const Tensor q = ops::reshape(heads.q, {sets, per_set, d, wh});
  const Tensor k = ops::reshape(heads.k, {sets, per_set, d, wh});
  const Tensor v = ops::reshape(heads.v, {sets, per_set, wh});
  // sum_{i != n} q_n^T k_i = q_n^T (sum_i k_i - k_n)
  const Tensor k_total = ops::sum_axis(k, 1);
  const double inv_sqrt_d = 1.0 / std::sqrt(double(d));
  std::vector<Tensor> maps;
  for (std::size_t n = 0; n < per_set; ++n) {
    const Tensor q_n = ops::reshape(ops::slice(q, 1, n, 1), {sets, d, wh});
    const Tensor k_n = ops::reshape(ops::slice(k, 1, n, 1), {sets, d, wh});
    const Tensor scores = ops::scale(ops::matmul(ops::transpose(q_n), ops::sub(k_total, k_n)),
                                     inv_sqrt_d);
    const Tensor attn = ops::softmax(scores, 2);
    const Tensor v_n = ops::reshape(ops::slice(v, 1, n, 1), {sets, wh, 1});
    maps.push_back(ops::reshape(ops::matmul(attn, v_n), {sets, heads.height, heads.width}));
  }
  return ops::stack(maps, 1);
}

Tensor normalize_and_upsample(const Tensor& maps, std::size_t out_h, std::size_t out_w) {
  if (maps.rank() != 4 || maps.dim(1) < 2) {
    throw Error("normalize_and_upsample: expected [K,N>=2,h,w], got " + shape_str(maps.shape()));
  }
  return ops::upsample_bilinear(ops::softmax(maps, 1), out_h, out_w);
}

void check_masks(const Tensor& masks, double tolerance) {
  if (masks.rank() != 4) throw Error("masks must be [K,N,H,W], got " + shape_str(masks.shape()));
  const std::size_t sets = masks.dim(0), n = masks.dim(1), plane = masks.dim(2) * masks.dim(3);
  const auto m = masks.data();
  for (std::size_t k = 0; k < sets; ++k)
    for (std::size_t p = 0; p < plane; ++p) {
      double total = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        const double v = m[(k * n + i) * plane + p];
        if (!(v >= -tolerance && v <= 1.0 + tolerance)) {
          throw Error("mask value " + std::to_string(v) + " outside [0, 1] in set " +
                      std::to_string(k));
        }
        total += v;
      }
      if (std::abs(total - 1.0) > tolerance) {
        throw Error("masks of set " + std::to_string(k) + " sum to " + std::to_string(total) +
                    " at pixel " + std::to_string(p));
      }
    }
}

Tensor mix_images(const Tensor& images, const Tensor& masks) {
  if (images.rank() != 5 || masks.rank() != 4 || images.dim(0) != masks.dim(0) ||
      images.dim(1) != masks.dim(1) || images.dim(3) != masks.dim(2) ||
      images.dim(4) != masks.dim(3)) {
    throw Error("mix_images: images " + shape_str(images.shape()) + " and masks " +
                shape_str(masks.shape()) + " disagree");
  }
  check_masks(masks);
  const Shape& s = images.shape();
  const Tensor m = ops::reshape(masks, {s[0], s[1], 1, s[3], s[4]});
  return ops::sum_axis(ops::mul(images, ops::broadcast_to(m, s)), 1);
}

Tensor linear_mix(const Tensor& images, const std::vector<std::vector<double>>& ratios) {
  if (images.rank() != 5 || ratios.size() != images.dim(0)) {
    throw Error("linear_mix: expected one ratio vector per set of " + shape_str(images.shape()));
  }
  const std::size_t sets = images.dim(0), n = images.dim(1);
  std::vector<double> w(sets * n);
  for (std::size_t k = 0; k < sets; ++k) {
    if (ratios[k].size() != n) throw Error("linear_mix: ratio count does not match N");
    check_simplex(ratios[k]);
    std::copy(ratios[k].begin(), ratios[k].end(), w.begin() + long(k * n));
  }
  const Shape& s = images.shape();
  const Tensor weights = Tensor::from({sets, n, 1, 1, 1}, std::move(w));
  return ops::sum_axis(ops::mul(images, ops::broadcast_to(weights, s)), 1);
}

Tensor gather_sets(const Tensor& batch, const std::vector<MixSet>& sets) {
  if (batch.rank() != 4) throw Error("gather_sets: expected [B,C,H,W]");
  if (sets.empty()) throw Error("gather_sets: no sets");
  const std::size_t n = sets.front().members.size();
  const std::size_t item = batch.size() / batch.dim(0);
  std::vector<double> values;
  values.reserve(sets.size() * n * item);
  const auto src = batch.data();
  for (const auto& set : sets) {
    if (set.members.size() != n) throw Error("gather_sets: sets differ in size");
    for (auto m : set.members) {
      if (m >= batch.dim(0)) throw Error("gather_sets: member " + std::to_string(m) + " out of range");
      values.insert(values.end(), src.begin() + long(m * item), src.begin() + long((m + 1) * item));
    }
  }
  return Tensor::from({sets.size(), n, batch.dim(1), batch.dim(2), batch.dim(3)},
                      std::move(values));
}

Generated generate(const Tensor& images, const std::vector<MixSet>& sets,
                   const GeneratorParams& theta, EncoderView& encoder, std::size_t layer) {
  return generate_from_features(images, encoder_features(encoder, images, layer), sets, theta);
}

Generated generate_from_features(const Tensor& images, const Tensor& features,
                                 const std::vector<MixSet>& sets, const GeneratorParams& theta) {
  if (sets.empty()) throw Error("generate: no sets");
  if (features.rank() != 4 || features.dim(0) != images.dim(0)) {
    throw Error("generate: features " + shape_str(features.shape()) + " do not match images " +
                shape_str(images.shape()));
  }
  const std::size_t n = sets.front().members.size();
  std::vector<double> lambdas;
  for (const auto& set : sets) {
    if (set.ratios.size() != set.members.size()) throw Error("generate: ratio count mismatch");
    check_simplex(set.ratios);
    lambdas.insert(lambdas.end(), set.ratios.begin(), set.ratios.end());
  }
  const Tensor grouped = gather_sets(features, sets);
  const Tensor z = ops::reshape(grouped, {sets.size() * n, features.dim(1), features.dim(2),
                                          features.dim(3)});
  const AttentionHeads heads = qkv_project(embed_ratio(z, lambdas), theta);
  Generated out;
  out.masks = normalize_and_upsample(cross_attention(heads, n), images.dim(2), images.dim(3));
  out.mixed = mix_images(gather_sets(images, sets), out.masks);
  return out;
}

std::vector<double> mix_labels(std::span<const std::size_t> labels, std::span<const double> ratios,
                               std::size_t num_classes) {
  if (labels.size() != ratios.size()) throw Error("mix_labels: label and ratio counts differ");
  check_simplex(ratios, 1e-9);
  std::vector<double> y(num_classes, 0.0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= num_classes) {
      throw Error("mix_labels: label " + std::to_string(labels[i]) + " outside [0, " +
                  std::to_string(num_classes) + ")");
    }
    y[labels[i]] += ratios[i];
  }
  return y;
}

Tensor mix_set_labels(const std::vector<MixSet>& sets, std::span<const std::size_t> labels,
                      std::size_t num_classes) {
  std::vector<double> values;
  values.reserve(sets.size() * num_classes);
  for (const auto& set : sets) {
    std::vector<std::size_t> member_labels;
    for (auto m : set.members) member_labels.push_back(labels[m]);
    const auto y = mix_labels(member_labels, set.ratios, num_classes);
    values.insert(values.end(), y.begin(), y.end());
  }
  return Tensor::from({sets.size(), num_classes}, std::move(values));
}

}  // namespace adamix
