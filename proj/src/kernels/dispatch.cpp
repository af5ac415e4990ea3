#include <atomic>

#include "adamix/kernels.hpp"
#include "adamix/tensor.hpp"

namespace adamix::kernels {

namespace {
std::atomic<Backend> g_backend{Backend::Parallel};
}

void set_backend(Backend b) { g_backend.store(b); }
Backend backend() { return g_backend.load(); }

ConvGeometry make_conv_geometry(std::size_t batch, std::size_t in_channels,
                                std::size_t in_h, std::size_t in_w,
                                std::size_t out_channels, std::size_t kernel,
                                std::size_t stride, std::size_t pad) {
  if (kernel == 0 || stride == 0) throw Error("conv2d: kernel and stride must be positive");
  if (in_h + 2 * pad < kernel || in_w + 2 * pad < kernel) {
    throw Error("conv2d: kernel larger than padded input");
  }
  ConvGeometry g{batch, in_channels, in_h, in_w, out_channels, kernel, stride, pad, 0, 0};
  g.out_h = (in_h + 2 * pad - kernel) / stride + 1;
  g.out_w = (in_w + 2 * pad - kernel) / stride + 1;
  return g;
}

void conv2d_forward(const ConvGeometry& g, std::span<const double> x,
                    std::span<const double> w, std::span<double> y) {
  if (backend() == Backend::Parallel) return parallel::conv2d_forward(g, x, w, y);
  reference::conv2d_forward(g, x, w, y);
}

void conv2d_backward_input(const ConvGeometry& g, std::span<const double> dy,
                           std::span<const double> w, std::span<double> dx) {
  if (backend() == Backend::Parallel) return parallel::conv2d_backward_input(g, dy, w, dx);
  reference::conv2d_backward_input(g, dy, w, dx);
}

void conv2d_backward_weight(const ConvGeometry& g, std::span<const double> dy,
                            std::span<const double> x, std::span<double> dw) {
  if (backend() == Backend::Parallel) return parallel::conv2d_backward_weight(g, dy, x, dw);
  reference::conv2d_backward_weight(g, dy, x, dw);
}

void gemm(const GemmShape& s, std::span<const double> a, std::span<const double> b,
          std::span<double> c) {
  if (backend() == Backend::Parallel) return parallel::gemm(s, a, b, c);
  reference::gemm(s, a, b, c);
}

}  // namespace adamix::kernels
