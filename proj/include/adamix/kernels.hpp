#pragma once

#include <cstddef>
#include <span>

// Dense inner loops behind the differentiable operations. Every kernel has a
// serial reference version and an OpenMP version; the OpenMP versions keep
// the per-element accumulation order of the reference, so both produce
// bitwise identical results at any thread count.

namespace adamix::kernels {

struct ConvGeometry {
  std::size_t batch = 0;
  std::size_t in_channels = 0;
  std::size_t in_h = 0;
  std::size_t in_w = 0;
  std::size_t out_channels = 0;
  std::size_t kernel = 1;
  std::size_t stride = 1;
  std::size_t pad = 0;
  std::size_t out_h = 0;
  std::size_t out_w = 0;
};

ConvGeometry make_conv_geometry(std::size_t batch, std::size_t in_channels,
                                std::size_t in_h, std::size_t in_w,
                                std::size_t out_channels, std::size_t kernel,
                                std::size_t stride, std::size_t pad);

// C[b] = op(A[b]) * op(B[b]) with op(A) of shape m x k, op(B) of shape k x n.
struct GemmShape {
  std::size_t batch = 1;
  std::size_t m = 0;
  std::size_t n = 0;
  std::size_t k = 0;
  bool trans_a = false;
  bool trans_b = false;
};

enum class Backend { Reference, Parallel };

void set_backend(Backend backend);
Backend backend();

// All kernels overwrite their output span.
#define ADAMIX_KERNEL_DECLS                                                    \
  void conv2d_forward(const ConvGeometry& g, std::span<const double> x,        \
                      std::span<const double> w, std::span<double> y);         \
  void conv2d_backward_input(const ConvGeometry& g, std::span<const double> dy, \
                             std::span<const double> w, std::span<double> dx); \
  void conv2d_backward_weight(const ConvGeometry& g,                           \
                              std::span<const double> dy,                      \
                              std::span<const double> x, std::span<double> dw); \
  void gemm(const GemmShape& s, std::span<const double> a,                     \
            std::span<const double> b, std::span<double> c);

namespace reference {
ADAMIX_KERNEL_DECLS
}  // namespace reference

namespace parallel {
ADAMIX_KERNEL_DECLS
}  // namespace parallel

// Dispatch on the active backend.
ADAMIX_KERNEL_DECLS

#undef ADAMIX_KERNEL_DECLS

}  // namespace adamix::kernels
