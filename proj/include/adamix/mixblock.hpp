#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "adamix/data.hpp"
#include "adamix/model.hpp"
#include "adamix/tensor.hpp"

namespace adamix {

/// Weights of the query, key and value 1x1 convolutions (no bias). Input
/// channels are C + 1: the ratio plane followed by C feature channels.
struct GeneratorParams {
  Tensor query;  // [d, C+1, 1, 1]
  Tensor key;    // [d, C+1, 1, 1]
  Tensor value;  // [1, C+1, 1, 1]

  static GeneratorParams init(std::size_t feature_channels, std::uint64_t seed);
  static std::size_t head_dim(std::size_t feature_channels) { return (feature_channels + 1) / 2; }

  std::size_t embedded_channels() const { return query.dim(1); }
  std::size_t d() const { return query.dim(0); }
  std::vector<Tensor> parameters() const { return {query, key, value}; }
  GeneratorParams clone() const;
};

/// Per-image heads, stacked over the B = K*N rows of a batch of sets.
struct AttentionHeads {
  Tensor q;  // [B, d, wh]
  Tensor k;  // [B, d, wh]
  Tensor v;  // [B, wh]
  std::size_t height = 0;
  std::size_t width = 0;
};

/// Prepends a constant plane lambdas[b] to each z[b] ([B,C,h,w] -> [B,C+1,h,w]).
Tensor embed_ratio(const Tensor& z, std::span<const double> lambdas);

Tensor strip_ratio(const Tensor& z_lambda);

AttentionHeads qkv_project(const Tensor& z_lambda, const GeneratorParams& theta);

/// Rows of `heads` are K consecutive groups of N images. For each image n of a
/// group, P_n = softmax(q_n^T sum_{i != n} k_i / sqrt(d), over keys) v_n.
/// Returns [K, N, h, w].
Tensor cross_attention(const AttentionHeads& heads, std::size_t per_set);

/// Softmax over the N axis of P [K,N,h,w], then bilinear upsampling of each
/// plane to [K,N,out_h,out_w].
Tensor normalize_and_upsample(const Tensor& maps, std::size_t out_h, std::size_t out_w);

/// Throws unless masks [K,N,H,W] lie in [0,1] and sum to 1 across N within tol.
void check_masks(const Tensor& masks, double tolerance = 1e-5);

/// x_mix[k] = sum_n images[k,n] * masks[k,n], broadcast over channels.
/// images [K,N,C,H,W], masks [K,N,H,W] -> [K,C,H,W].
Tensor mix_images(const Tensor& images, const Tensor& masks);

/// sum_n ratios[k][n] * images[k,n] -> [K,C,H,W].
Tensor linear_mix(const Tensor& images, const std::vector<std::vector<double>>& ratios);

/// Gathers the members of each set from a [B,C,H,W] batch into [K,N,C,H,W].
/// The result carries no gradient.
Tensor gather_sets(const Tensor& batch, const std::vector<MixSet>& sets);

struct Generated {
  Tensor masks;  // [K,N,H,W]
  Tensor mixed;  // [K,C,H,W]
};

/// Encoder features (no gradient) -> ratio embedding -> q/k/v -> cross
/// attention -> normalization and upsampling -> Hadamard mixing. Gradients
/// flow into theta only.
Generated generate(const Tensor& images, const std::vector<MixSet>& sets,
                   const GeneratorParams& theta, EncoderView& encoder, std::size_t layer);

/// As generate, from precomputed encoder features [B,C',h,w] of the batch.
Generated generate_from_features(const Tensor& images, const Tensor& features,
                                 const std::vector<MixSet>& sets, const GeneratorParams& theta);

/// sum_n ratios[n] * onehot(labels[n]).
std::vector<double> mix_labels(std::span<const std::size_t> labels,
                               std::span<const double> ratios, std::size_t num_classes);

/// Mixed label of every set, [K, num_classes]; labels index the batch.
Tensor mix_set_labels(const std::vector<MixSet>& sets, std::span<const std::size_t> labels,
                      std::size_t num_classes);

/// Throws unless ratios are nonnegative and sum to 1 within tol.
void check_simplex(std::span<const double> ratios, double tolerance = 1e-6);

}  // namespace adamix
