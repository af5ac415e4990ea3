#pragma once

#include <cstddef>
#include <vector>

#include "adamix/tensor.hpp"

// Differentiable operations. Every function validates shapes and throws
// adamix::Error on violation; results record a reverse rule only when an
// input requires gradient and gradient recording is enabled.

namespace adamix::ops {

// Elementwise, equal shapes.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
Tensor add_scalar(const Tensor& a, double value);
Tensor relu(const Tensor& a);

/// Expands size-1 axes (same rank) to `shape`; reverse sums them back.
Tensor broadcast_to(const Tensor& a, const Shape& shape);
Tensor reshape(const Tensor& a, const Shape& shape);
Tensor permute(const Tensor& a, const std::vector<std::size_t>& axes);
/// Swaps the last two axes.
Tensor transpose(const Tensor& a);

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
/// Reduces and removes `axis`.
Tensor sum_axis(const Tensor& a, std::size_t axis);
Tensor mean_axis(const Tensor& a, std::size_t axis);

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);
/// Inserts a new axis at `axis` and concatenates along it.
Tensor stack(const std::vector<Tensor>& parts, std::size_t axis);
Tensor slice(const Tensor& a, std::size_t axis, std::size_t start, std::size_t length);

/// Rejects non-finite input.
Tensor softmax(const Tensor& a, std::size_t axis);
Tensor log_softmax(const Tensor& a, std::size_t axis);

/// [m,k]x[k,n] or batched [B,m,k]x[B,k,n].
Tensor matmul(const Tensor& a, const Tensor& b);
/// x [B,D], weight [O,D], bias [O] (may be undefined) -> [B,O].
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);

/// x [B,C,H,W], weight [O,C,k,k] -> [B,O,H',W'].
Tensor conv2d(const Tensor& x, const Tensor& weight, std::size_t stride,
              std::size_t pad);
/// Adds a per-channel bias [C] to x [B,C,H,W].
Tensor add_channel_bias(const Tensor& x, const Tensor& bias);
/// [B,C,H,W] -> [B,C].
Tensor global_avg_pool(const Tensor& x);

enum class BnMode {
  Train,        // batch statistics, running statistics updated
  TrainFrozen,  // batch statistics, running statistics left alone
  Eval,         // running statistics
};

struct BatchNormStats {
  std::vector<double> running_mean;
  std::vector<double> running_var;
  double momentum = 0.1;
  double eps = 1e-5;
};

/// x [B,C,H,W], gamma/beta [C].
Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  BatchNormStats& stats, BnMode mode);

/// Resizes the last two axes with align_corners = false; target must not be
/// smaller than the source.
Tensor upsample_bilinear(const Tensor& x, std::size_t out_h, std::size_t out_w);

/// -sum(target * log_softmax(logits)) along the last axis; [K] -> scalar,
/// [B,K] -> [B]. Target rows must be probability vectors (1e-6).
Tensor cross_entropy_soft(const Tensor& logits, const Tensor& target);

/// Cosine similarity along the last axis; [D] -> scalar, [B,D] -> [B].
/// Zero-norm rows are rejected.
Tensor cosine_similarity(const Tensor& a, const Tensor& b);

}  // namespace adamix::ops
