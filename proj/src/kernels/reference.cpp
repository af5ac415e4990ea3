#include "adamix/kernels.hpp"

namespace adamix::kernels::reference {

namespace {
inline double a_at(const GemmShape& s, std::span<const double> a, std::size_t b,
                   std::size_t i, std::size_t p) {
  const std::size_t base = b * s.m * s.k;
  return s.trans_a ? a[base + p * s.m + i] : a[base + i * s.k + p];
}

inline double b_at(const GemmShape& s, std::span<const double> bm, std::size_t b,
                   std::size_t p, std::size_t j) {
  const std::size_t base = b * s.k * s.n;
  return s.trans_b ? bm[base + j * s.k + p] : bm[base + p * s.n + j];
}
}  // namespace

void conv2d_forward(const ConvGeometry& g, std::span<const double> x,
                    std::span<const double> w, std::span<double> y) {
  for (std::size_t b = 0; b < g.batch; ++b)
    for (std::size_t o = 0; o < g.out_channels; ++o)
      for (std::size_t oy = 0; oy < g.out_h; ++oy)
        for (std::size_t ox = 0; ox < g.out_w; ++ox) {
          double sum = 0.0;
          for (std::size_t c = 0; c < g.in_channels; ++c)
            for (std::size_t ky = 0; ky < g.kernel; ++ky)
              for (std::size_t kx = 0; kx < g.kernel; ++kx) {
                const long iy = long(oy * g.stride + ky) - long(g.pad);
                const long ix = long(ox * g.stride + kx) - long(g.pad);
                if (iy < 0 || ix < 0 || iy >= long(g.in_h) || ix >= long(g.in_w))
                  continue;
                sum += w[((o * g.in_channels + c) * g.kernel + ky) * g.kernel + kx] *
                       x[((b * g.in_channels + c) * g.in_h + iy) * g.in_w + ix];
              }
          y[((b * g.out_channels + o) * g.out_h + oy) * g.out_w + ox] = sum;
        }
}

void conv2d_backward_input(const ConvGeometry& g, std::span<const double> dy,
                           std::span<const double> w, std::span<double> dx) {
  for (std::size_t b = 0; b < g.batch; ++b)
    for (std::size_t c = 0; c < g.in_channels; ++c)
      for (std::size_t iy = 0; iy < g.in_h; ++iy)
        for (std::size_t ix = 0; ix < g.in_w; ++ix) {
          double sum = 0.0;
          for (std::size_t o = 0; o < g.out_channels; ++o)
            for (std::size_t ky = 0; ky < g.kernel; ++ky)
              for (std::size_t kx = 0; kx < g.kernel; ++kx) {
                const long ny = long(iy + g.pad) - long(ky);
                const long nx = long(ix + g.pad) - long(kx);
                if (ny < 0 || nx < 0 || ny % long(g.stride) || nx % long(g.stride))
                  continue;
                const std::size_t oy = std::size_t(ny) / g.stride;
                const std::size_t ox = std::size_t(nx) / g.stride;
                if (oy >= g.out_h || ox >= g.out_w) continue;
                sum += w[((o * g.in_channels + c) * g.kernel + ky) * g.kernel + kx] *
                       dy[((b * g.out_channels + o) * g.out_h + oy) * g.out_w + ox];
              }
          dx[((b * g.in_channels + c) * g.in_h + iy) * g.in_w + ix] = sum;
        }
}

void conv2d_backward_weight(const ConvGeometry& g, std::span<const double> dy,
                            std::span<const double> x, std::span<double> dw) {
  for (std::size_t o = 0; o < g.out_channels; ++o)
    for (std::size_t c = 0; c < g.in_channels; ++c)
      for (std::size_t ky = 0; ky < g.kernel; ++ky)
        for (std::size_t kx = 0; kx < g.kernel; ++kx) {
          double sum = 0.0;
          for (std::size_t b = 0; b < g.batch; ++b)
            for (std::size_t oy = 0; oy < g.out_h; ++oy)
              for (std::size_t ox = 0; ox < g.out_w; ++ox) {
                const long iy = long(oy * g.stride + ky) - long(g.pad);
                const long ix = long(ox * g.stride + kx) - long(g.pad);
                if (iy < 0 || ix < 0 || iy >= long(g.in_h) || ix >= long(g.in_w))
                  continue;
                sum += dy[((b * g.out_channels + o) * g.out_h + oy) * g.out_w + ox] *
                       x[((b * g.in_channels + c) * g.in_h + iy) * g.in_w + ix];
              }
          dw[((o * g.in_channels + c) * g.kernel + ky) * g.kernel + kx] = sum;
        }
}

void gemm(const GemmShape& s, std::span<const double> a, std::span<const double> bm,
          std::span<double> c) {
  for (std::size_t b = 0; b < s.batch; ++b)
    for (std::size_t i = 0; i < s.m; ++i)
      for (std::size_t j = 0; j < s.n; ++j) {
        double sum = 0.0;
        for (std::size_t p = 0; p < s.k; ++p) sum += a_at(s, a, b, i, p) * b_at(s, bm, b, p, j);
        c[(b * s.m + i) * s.n + j] = sum;
      }
}

}  // namespace adamix::kernels::reference
