#include <algorithm>
#include <vector>

#include "adamix/kernels.hpp"

namespace adamix::kernels::parallel {

namespace {
// Output positions o whose input coordinate o * stride + k - pad lies in [0, in).
struct Range {
  std::size_t lo = 0;
  std::size_t hi = 0;  // exclusive
};

Range valid_range(std::size_t out, std::size_t in, std::size_t stride, std::size_t k,
                  std::size_t pad) {
  Range r;
  r.lo = k >= pad ? 0 : (pad - k + stride - 1) / stride;
  if (in + pad <= k) return {0, 0};
  r.hi = std::min(out, (in + pad - k - 1) / stride + 1);
  if (r.lo > r.hi) r.lo = r.hi;
  return r;
}

std::vector<Range> ranges(std::size_t out, std::size_t in, std::size_t stride,
                          std::size_t kernel, std::size_t pad) {
  std::vector<Range> r(kernel);
  for (std::size_t k = 0; k < kernel; ++k) r[k] = valid_range(out, in, stride, k, pad);
  return r;
}


// [B, C, P] <-> [C, P, B]: the batch becomes the contiguous inner axis.
void to_batch_inner(std::span<const double> src, std::size_t batch, std::size_t rows,
                    std::vector<double>& dst) {
  dst.resize(batch * rows);
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t r = 0; r < rows; ++r) dst[r * batch + b] = src[b * rows + r];
}

void from_batch_inner(const std::vector<double>& src, std::size_t batch, std::size_t rows,
                      std::span<double> dst) {
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t r = 0; r < rows; ++r) dst[b * rows + r] = src[r * batch + b];
}

}  // namespace

// Each output keeps the reference summation order; only the loop nest and
// memory layout differ.
void conv2d_forward(const ConvGeometry& g, std::span<const double> x,
                    std::span<const double> w, std::span<double> y) {
  const auto ry = ranges(g.out_h, g.in_h, g.stride, g.kernel, g.pad);
  const auto rx = ranges(g.out_w, g.in_w, g.stride, g.kernel, g.pad);
  const std::size_t nb = g.batch;
  std::vector<double> xt, yt(g.out_channels * g.out_h * g.out_w * nb, 0.0);
  to_batch_inner(x, nb, g.in_channels * g.in_h * g.in_w, xt);
  const long outs = long(g.out_channels);
#pragma omp parallel for schedule(static)
  for (long ol = 0; ol < outs; ++ol) {
    const std::size_t o = std::size_t(ol);
    double* out = yt.data() + o * g.out_h * g.out_w * nb;
    for (std::size_t c = 0; c < g.in_channels; ++c) {
      const double* in = xt.data() + c * g.in_h * g.in_w * nb;
      for (std::size_t ky = 0; ky < g.kernel; ++ky)
        for (std::size_t kx = 0; kx < g.kernel; ++kx) {
          const double wv = w[((o * g.in_channels + c) * g.kernel + ky) * g.kernel + kx];
          for (std::size_t oy = ry[ky].lo; oy < ry[ky].hi; ++oy) {
            const std::size_t iy = oy * g.stride + ky - g.pad;
            for (std::size_t ox = rx[kx].lo; ox < rx[kx].hi; ++ox) {
              const std::size_t ix = ox * g.stride + kx - g.pad;
              double* dst = out + (oy * g.out_w + ox) * nb;
              const double* src = in + (iy * g.in_w + ix) * nb;
              for (std::size_t b = 0; b < nb; ++b) dst[b] += wv * src[b];
            }
          }
        }
    }
  }
  from_batch_inner(yt, nb, g.out_channels * g.out_h * g.out_w, y);
}

void conv2d_backward_input(const ConvGeometry& g, std::span<const double> dy,
                           std::span<const double> w, std::span<double> dx) {
  const auto ry = ranges(g.out_h, g.in_h, g.stride, g.kernel, g.pad);
  const auto rx = ranges(g.out_w, g.in_w, g.stride, g.kernel, g.pad);
  const std::size_t nb = g.batch;
  std::vector<double> dyt, dxt(g.in_channels * g.in_h * g.in_w * nb, 0.0);
  to_batch_inner(dy, nb, g.out_channels * g.out_h * g.out_w, dyt);
  const long ins = long(g.in_channels);
#pragma omp parallel for schedule(static)
  for (long cl = 0; cl < ins; ++cl) {
    const std::size_t c = std::size_t(cl);
    double* out = dxt.data() + c * g.in_h * g.in_w * nb;
    for (std::size_t o = 0; o < g.out_channels; ++o) {
      const double* grad = dyt.data() + o * g.out_h * g.out_w * nb;
      for (std::size_t ky = 0; ky < g.kernel; ++ky)
        for (std::size_t kx = 0; kx < g.kernel; ++kx) {
          const double wv = w[((o * g.in_channels + c) * g.kernel + ky) * g.kernel + kx];
          for (std::size_t oy = ry[ky].lo; oy < ry[ky].hi; ++oy) {
            const std::size_t iy = oy * g.stride + ky - g.pad;
            for (std::size_t ox = rx[kx].lo; ox < rx[kx].hi; ++ox) {
              const std::size_t ix = ox * g.stride + kx - g.pad;
              double* dst = out + (iy * g.in_w + ix) * nb;
              const double* src = grad + (oy * g.out_w + ox) * nb;
              for (std::size_t b = 0; b < nb; ++b) dst[b] += wv * src[b];
            }
          }
        }
    }
  }
  from_batch_inner(dxt, nb, g.in_channels * g.in_h * g.in_w, dx);
}

void conv2d_backward_weight(const ConvGeometry& g, std::span<const double> dy,
                            std::span<const double> x, std::span<double> dw) {
  const auto ry = ranges(g.out_h, g.in_h, g.stride, g.kernel, g.pad);
  const auto rx = ranges(g.out_w, g.in_w, g.stride, g.kernel, g.pad);
  const std::size_t plane = g.out_h * g.out_w;
  const std::size_t oc = g.out_channels;
  // dy as [B, OH, OW, O] so output channels are the contiguous inner axis.
  std::vector<double> dyt(g.batch * plane * oc);
  for (std::size_t b = 0; b < g.batch; ++b)
    for (std::size_t o = 0; o < oc; ++o)
      for (std::size_t p = 0; p < plane; ++p)
        dyt[(b * plane + p) * oc + o] = dy[(b * oc + o) * plane + p];
  const std::size_t taps = g.kernel * g.kernel;
  std::vector<double> dwt(g.in_channels * taps * oc, 0.0);
  const long ins = long(g.in_channels);
#pragma omp parallel for schedule(static)
  for (long cl = 0; cl < ins; ++cl) {
    const std::size_t c = std::size_t(cl);
    for (std::size_t ky = 0; ky < g.kernel; ++ky)
      for (std::size_t kx = 0; kx < g.kernel; ++kx) {
        double* acc = dwt.data() + ((c * g.kernel + ky) * g.kernel + kx) * oc;
        for (std::size_t b = 0; b < g.batch; ++b) {
          const double* in = x.data() + (b * g.in_channels + c) * g.in_h * g.in_w;
          for (std::size_t oy = ry[ky].lo; oy < ry[ky].hi; ++oy) {
            const std::size_t iy = oy * g.stride + ky - g.pad;
            for (std::size_t ox = rx[kx].lo; ox < rx[kx].hi; ++ox) {
              const double xv = in[iy * g.in_w + ox * g.stride + kx - g.pad];
              const double* grad = dyt.data() + (b * plane + oy * g.out_w + ox) * oc;
              for (std::size_t o = 0; o < oc; ++o) acc[o] += grad[o] * xv;
            }
          }
        }
      }
  }
  for (std::size_t o = 0; o < oc; ++o)
    for (std::size_t t = 0; t < g.in_channels * taps; ++t) dw[o * g.in_channels * taps + t] = dwt[t * oc + o];
}

void gemm(const GemmShape& s, std::span<const double> a, std::span<const double> bm,
          std::span<double> c) {
  const long rows = long(s.batch * s.m);
#pragma omp parallel for schedule(static)
  for (long r = 0; r < rows; ++r) {
    const std::size_t b = std::size_t(r) / s.m;
    const std::size_t i = std::size_t(r) % s.m;
    double* out = c.data() + std::size_t(r) * s.n;
    std::fill(out, out + s.n, 0.0);
    const double* abase = a.data() + b * s.m * s.k;
    const double* bbase = bm.data() + b * s.k * s.n;
    for (std::size_t p = 0; p < s.k; ++p) {
      const double av = s.trans_a ? abase[p * s.m + i] : abase[i * s.k + p];
      if (s.trans_b) {
        for (std::size_t j = 0; j < s.n; ++j) out[j] += av * bbase[j * s.k + p];
      } else {
        const double* brow = bbase + p * s.n;
        for (std::size_t j = 0; j < s.n; ++j) out[j] += av * brow[j];
      }
    }
  }
}

}  // namespace adamix::kernels::parallel
