#include "adamix/ops.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>

#include "adamix/kernels.hpp"

namespace adamix::ops {

namespace {

using Reverse = std::function<void(Node&)>;

Tensor make_result(Shape shape, std::vector<double> value, const char* op,
                   const std::vector<Tensor>& inputs, Reverse reverse) {
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  node->op = op;
  if (grad_enabled()) {
    std::vector<char> wants;
    bool any = false;
    for (const auto& in : inputs) {
      wants.push_back(in.requires_grad() ? 1 : 0);
      any = any || in.requires_grad();
    }
    if (any) {
      node->requires_grad = true;
      for (const auto& in : inputs) node->inputs.push_back(in.node());
      node->input_wants_grad = std::move(wants);
      node->reverse = std::move(reverse);
    }
  }
  return Tensor(std::move(node));
}

// Gradient buffer of input i, or nullptr if it takes no gradient.
double* grad_of(Node& self, std::size_t i) {
  if (!self.input_wants_grad[i]) return nullptr;
  return self.inputs[i]->grad.data();
}

void require(bool cond, const std::string& message) {
  if (!cond) throw Error(message);
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  require(a.defined() && b.defined(), std::string(op) + ": undefined tensor");
  require(a.shape() == b.shape(), std::string(op) + ": shape mismatch " +
                                      shape_str(a.shape()) + " vs " +
                                      shape_str(b.shape()));
}

struct AxisSplit {
  std::size_t outer = 1;
  std::size_t n = 1;
  std::size_t inner = 1;
};

AxisSplit split_at(const Shape& shape, std::size_t axis, const char* op) {
  require(axis < shape.size(), std::string(op) + ": axis " + std::to_string(axis) +
                                   " invalid for shape " + shape_str(shape));
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.n = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

std::vector<std::size_t> strides_of(const Shape& shape) {
  std::vector<std::size_t> strides(shape.size(), 1);
  for (std::size_t i = shape.size(); i-- > 1;) strides[i - 1] = strides[i] * shape[i];
  return strides;
}

void require_finite(const Tensor& a, const char* op) {
  const auto data = a.data();
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (!std::isfinite(data[i])) {
      throw NonFiniteError(std::string(op) + ": non-finite input at flat index " +
                  std::to_string(i));
    }
  }
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + b.data()[i];
  return make_result(a.shape(), std::move(out), "add", {a, b}, [](Node& self) {
    for (std::size_t k = 0; k < 2; ++k)
      if (double* g = grad_of(self, k))
        for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] - b.data()[i];
  return make_result(a.shape(), std::move(out), "sub", {a, b}, [](Node& self) {
    if (double* g = grad_of(self, 0))
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
    if (double* g = grad_of(self, 1))
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] -= self.grad[i];
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * b.data()[i];
  return make_result(a.shape(), std::move(out), "mul", {a, b}, [](Node& self) {
    const auto& av = self.inputs[0]->value;
    const auto& bv = self.inputs[1]->value;
    if (double* g = grad_of(self, 0))
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * bv[i];
    if (double* g = grad_of(self, 1))
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * av[i];
  });
}

Tensor scale(const Tensor& a, double factor) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * factor;
  return make_result(a.shape(), std::move(out), "scale", {a}, [factor](Node& self) {
    if (double* g = grad_of(self, 0))
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * factor;
  });
}

Tensor add_scalar(const Tensor& a, double value) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + value;
  return make_result(a.shape(), std::move(out), "add_scalar", {a}, [](Node& self) {
    if (double* g = grad_of(self, 0))
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
  });
}

Tensor relu(const Tensor& a) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::max(a.data()[i], 0.0);
  return make_result(a.shape(), std::move(out), "relu", {a}, [](Node& self) {
    const auto& av = self.inputs[0]->value;
    if (double* g = grad_of(self, 0))
      for (std::size_t i = 0; i < self.grad.size(); ++i)
        if (av[i] > 0.0) g[i] += self.grad[i];
  });
}

Tensor broadcast_to(const Tensor& a, const Shape& shape) {
  const Shape& src = a.shape();
  require(src.size() == shape.size(), "broadcast_to: rank mismatch " +
                                          shape_str(src) + " -> " + shape_str(shape));
  for (std::size_t i = 0; i < src.size(); ++i) {
    require(src[i] == shape[i] || src[i] == 1,
            "broadcast_to: cannot expand " + shape_str(src) + " to " + shape_str(shape));
  }
  const auto src_strides = strides_of(src);
  const auto dst_strides = strides_of(shape);
  const std::size_t total = shape_size(shape);
  // Source offset of every destination element.
  std::vector<std::size_t> index(total);
  for (std::size_t flat = 0; flat < total; ++flat) {
    std::size_t rem = flat;
    std::size_t off = 0;
    for (std::size_t d = 0; d < shape.size(); ++d) {
      const std::size_t coord = rem / dst_strides[d];
      rem %= dst_strides[d];
      if (src[d] != 1) off += coord * src_strides[d];
    }
    index[flat] = off;
  }
  std::vector<double> out(total);
  for (std::size_t i = 0; i < total; ++i) out[i] = a.data()[index[i]];
  return make_result(shape, std::move(out), "broadcast_to", {a},
                     [index = std::move(index)](Node& self) {
                       if (double* g = grad_of(self, 0))
                         for (std::size_t i = 0; i < index.size(); ++i)
                           g[index[i]] += self.grad[i];
                     });
}

Tensor reshape(const Tensor& a, const Shape& shape) {
  require(shape_size(shape) == a.size(), "reshape: cannot view " +
                                             shape_str(a.shape()) + " as " +
                                             shape_str(shape));
  std::vector<double> out(a.data().begin(), a.data().end());
  return make_result(shape, std::move(out), "reshape", {a}, [](Node& self) {
    if (double* g = grad_of(self, 0))
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
  });
}

Tensor permute(const Tensor& a, const std::vector<std::size_t>& axes) {
  const Shape& src = a.shape();
  require(axes.size() == src.size(), "permute: axis list rank mismatch");
  std::vector<char> seen(src.size(), 0);
  for (auto ax : axes) {
    require(ax < src.size() && !seen[ax], "permute: axes are not a permutation");
    seen[ax] = 1;
  }
  Shape dst(src.size());
  for (std::size_t i = 0; i < axes.size(); ++i) dst[i] = src[axes[i]];
  const auto src_strides = strides_of(src);
  const auto dst_strides = strides_of(dst);
  const std::size_t total = a.size();
  std::vector<std::size_t> index(total);
  for (std::size_t flat = 0; flat < total; ++flat) {
    std::size_t rem = flat;
    std::size_t off = 0;
    for (std::size_t d = 0; d < dst.size(); ++d) {
      off += (rem / dst_strides[d]) * src_strides[axes[d]];
      rem %= dst_strides[d];
    }
    index[flat] = off;
  }
  std::vector<double> out(total);
  for (std::size_t i = 0; i < total; ++i) out[i] = a.data()[index[i]];
  return make_result(dst, std::move(out), "permute", {a},
                     [index = std::move(index)](Node& self) {
                       if (double* g = grad_of(self, 0))
                         for (std::size_t i = 0; i < index.size(); ++i)
                           g[index[i]] += self.grad[i];
                     });
}

Tensor transpose(const Tensor& a) {
  require(a.rank() >= 2, "transpose: rank must be at least 2");
  std::vector<std::size_t> axes(a.rank());
  std::iota(axes.begin(), axes.end(), 0);
  std::swap(axes[a.rank() - 1], axes[a.rank() - 2]);
  return permute(a, axes);
}

Tensor sum(const Tensor& a) {
  double total = 0.0;
  for (double v : a.data()) total += v;
  return make_result({}, {total}, "sum", {a}, [](Node& self) {
    if (double* g = grad_of(self, 0)) {
      const std::size_t n = self.inputs[0]->value.size();
      for (std::size_t i = 0; i < n; ++i) g[i] += self.grad[0];
    }
  });
}

Tensor mean(const Tensor& a) {
  require(a.size() > 0, "mean: empty tensor");
  return scale(sum(a), 1.0 / double(a.size()));
}

Tensor sum_axis(const Tensor& a, std::size_t axis) {
  const AxisSplit s = split_at(a.shape(), axis, "sum_axis");
  Shape out_shape = a.shape();
  out_shape.erase(out_shape.begin() + long(axis));
  std::vector<double> out(s.outer * s.inner, 0.0);
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t i = 0; i < s.n; ++i)
      for (std::size_t in = 0; in < s.inner; ++in)
        out[o * s.inner + in] += a.data()[(o * s.n + i) * s.inner + in];
  return make_result(std::move(out_shape), std::move(out), "sum_axis", {a},
                     [s](Node& self) {
                       if (double* g = grad_of(self, 0))
                         for (std::size_t o = 0; o < s.outer; ++o)
                           for (std::size_t i = 0; i < s.n; ++i)
                             for (std::size_t in = 0; in < s.inner; ++in)
                               g[(o * s.n + i) * s.inner + in] += self.grad[o * s.inner + in];
                     });
}

Tensor mean_axis(const Tensor& a, std::size_t axis) {
  const AxisSplit s = split_at(a.shape(), axis, "mean_axis");
  require(s.n > 0, "mean_axis: empty axis");
  return scale(sum_axis(a, axis), 1.0 / double(s.n));
}

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  require(!parts.empty(), "concat: no inputs");
  const Shape& first = parts.front().shape();
  require(axis < first.size(), "concat: invalid axis");
  Shape out_shape = first;
  out_shape[axis] = 0;
  for (const auto& p : parts) {
    require(p.rank() == first.size(), "concat: rank mismatch");
    for (std::size_t d = 0; d < first.size(); ++d) {
      if (d != axis) {
        require(p.shape()[d] == first[d], "concat: shape mismatch " +
                                              shape_str(p.shape()) + " vs " +
                                              shape_str(first));
      }
    }
    out_shape[axis] += p.shape()[axis];
  }
  const AxisSplit s = split_at(out_shape, axis, "concat");
  std::vector<std::size_t> lengths;
  std::vector<std::size_t> offsets;
  std::size_t offset = 0;
  for (const auto& p : parts) {
    lengths.push_back(p.shape()[axis]);
    offsets.push_back(offset);
    offset += p.shape()[axis];
  }
  std::vector<double> out(shape_size(out_shape));
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const auto src = parts[k].data();
    const std::size_t block = lengths[k] * s.inner;
    for (std::size_t o = 0; o < s.outer; ++o)
      std::copy_n(src.begin() + long(o * block), block,
                  out.begin() + long((o * s.n + offsets[k]) * s.inner));
  }
  return make_result(std::move(out_shape), std::move(out), "concat", parts,
                     [s, lengths, offsets](Node& self) {
                       for (std::size_t k = 0; k < lengths.size(); ++k) {
                         double* g = grad_of(self, k);
                         if (!g) continue;
                         const std::size_t block = lengths[k] * s.inner;
                         for (std::size_t o = 0; o < s.outer; ++o)
                           for (std::size_t i = 0; i < block; ++i)
                             g[o * block + i] +=
                                 self.grad[(o * s.n + offsets[k]) * s.inner + i];
                       }
                     });
}

Tensor stack(const std::vector<Tensor>& parts, std::size_t axis) {
  require(!parts.empty(), "stack: no inputs");
  require(axis <= parts.front().rank(), "stack: invalid axis");
  std::vector<Tensor> expanded;
  expanded.reserve(parts.size());
  for (const auto& p : parts) {
    Shape s = p.shape();
    s.insert(s.begin() + long(axis), 1);
    expanded.push_back(reshape(p, s));
  }
  return concat(expanded, axis);
}

Tensor slice(const Tensor& a, std::size_t axis, std::size_t start, std::size_t length) {
  const AxisSplit s = split_at(a.shape(), axis, "slice");
  require(start + length <= s.n, "slice: range [" + std::to_string(start) + ", " +
                                     std::to_string(start + length) +
                                     ") exceeds axis of size " + std::to_string(s.n));
  Shape out_shape = a.shape();
  out_shape[axis] = length;
  std::vector<double> out(s.outer * length * s.inner);
  for (std::size_t o = 0; o < s.outer; ++o)
    std::copy_n(a.data().begin() + long((o * s.n + start) * s.inner), length * s.inner,
                out.begin() + long(o * length * s.inner));
  return make_result(std::move(out_shape), std::move(out), "slice", {a},
                     [s, start, length](Node& self) {
                       if (double* g = grad_of(self, 0))
                         for (std::size_t o = 0; o < s.outer; ++o)
                           for (std::size_t i = 0; i < length * s.inner; ++i)
                             g[(o * s.n + start) * s.inner + i] +=
                                 self.grad[o * length * s.inner + i];
                     });
}

Tensor softmax(const Tensor& a, std::size_t axis) {
  const AxisSplit s = split_at(a.shape(), axis, "softmax");
  require_finite(a, "softmax");
  std::vector<double> out(a.size());
  const auto x = a.data();
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t in = 0; in < s.inner; ++in) {
      auto at = [&](std::size_t i) { return (o * s.n + i) * s.inner + in; };
      double peak = x[at(0)];
      for (std::size_t i = 1; i < s.n; ++i) peak = std::max(peak, x[at(i)]);
      double total = 0.0;
      for (std::size_t i = 0; i < s.n; ++i) {
        out[at(i)] = std::exp(x[at(i)] - peak);
        total += out[at(i)];
      }
      for (std::size_t i = 0; i < s.n; ++i) out[at(i)] /= total;
    }
  return make_result(a.shape(), std::move(out), "softmax", {a}, [s](Node& self) {
    double* g = grad_of(self, 0);
    if (!g) return;
    const auto& y = self.value;
    for (std::size_t o = 0; o < s.outer; ++o)
      for (std::size_t in = 0; in < s.inner; ++in) {
        auto at = [&](std::size_t i) { return (o * s.n + i) * s.inner + in; };
        double dot = 0.0;
        for (std::size_t i = 0; i < s.n; ++i) dot += self.grad[at(i)] * y[at(i)];
        for (std::size_t i = 0; i < s.n; ++i) g[at(i)] += y[at(i)] * (self.grad[at(i)] - dot);
      }
  });
}

Tensor log_softmax(const Tensor& a, std::size_t axis) {
  const AxisSplit s = split_at(a.shape(), axis, "log_softmax");
  require_finite(a, "log_softmax");
  std::vector<double> out(a.size());
  const auto x = a.data();
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t in = 0; in < s.inner; ++in) {
      auto at = [&](std::size_t i) { return (o * s.n + i) * s.inner + in; };
      double peak = x[at(0)];
      for (std::size_t i = 1; i < s.n; ++i) peak = std::max(peak, x[at(i)]);
      double total = 0.0;
      for (std::size_t i = 0; i < s.n; ++i) total += std::exp(x[at(i)] - peak);
      const double log_total = std::log(total) + peak;
      for (std::size_t i = 0; i < s.n; ++i) out[at(i)] = x[at(i)] - log_total;
    }
  return make_result(a.shape(), std::move(out), "log_softmax", {a}, [s](Node& self) {
    double* g = grad_of(self, 0);
    if (!g) return;
    const auto& y = self.value;
    for (std::size_t o = 0; o < s.outer; ++o)
      for (std::size_t in = 0; in < s.inner; ++in) {
        auto at = [&](std::size_t i) { return (o * s.n + i) * s.inner + in; };
        double total = 0.0;
        for (std::size_t i = 0; i < s.n; ++i) total += self.grad[at(i)];
        for (std::size_t i = 0; i < s.n; ++i)
          g[at(i)] += self.grad[at(i)] - std::exp(y[at(i)]) * total;
      }
  });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  require(a.defined() && b.defined(), "matmul: undefined tensor");
  const bool batched = a.rank() == 3;
  require((a.rank() == 2 && b.rank() == 2) || (a.rank() == 3 && b.rank() == 3),
          "matmul: expects two rank-2 or two rank-3 tensors, got " +
              shape_str(a.shape()) + " and " + shape_str(b.shape()));
  kernels::GemmShape gs;
  gs.batch = batched ? a.dim(0) : 1;
  gs.m = a.dim(a.rank() - 2);
  gs.k = a.dim(a.rank() - 1);
  gs.n = b.dim(b.rank() - 1);
  require(b.dim(b.rank() - 2) == gs.k && (!batched || b.dim(0) == gs.batch),
          "matmul: inner dimension mismatch " + shape_str(a.shape()) + " x " +
              shape_str(b.shape()));
  Shape out_shape = batched ? Shape{gs.batch, gs.m, gs.n} : Shape{gs.m, gs.n};
  std::vector<double> out(gs.batch * gs.m * gs.n);
  kernels::gemm(gs, a.data(), b.data(), out);
  return make_result(std::move(out_shape), std::move(out), "matmul", {a, b},
                     [gs](Node& self) {
                       const auto& av = self.inputs[0]->value;
                       const auto& bv = self.inputs[1]->value;
                       if (double* g = grad_of(self, 0)) {
                         // dA = dC * B^T
                         kernels::GemmShape s{gs.batch, gs.m, gs.k, gs.n, false, true};
                         std::vector<double> tmp(gs.batch * gs.m * gs.k);
                         kernels::gemm(s, self.grad, bv, tmp);
                         for (std::size_t i = 0; i < tmp.size(); ++i) g[i] += tmp[i];
                       }
                       if (double* g = grad_of(self, 1)) {
                         // dB = A^T * dC
                         kernels::GemmShape s{gs.batch, gs.k, gs.n, gs.m, true, false};
                         std::vector<double> tmp(gs.batch * gs.k * gs.n);
                         kernels::gemm(s, av, self.grad, tmp);
                         for (std::size_t i = 0; i < tmp.size(); ++i) g[i] += tmp[i];
                       }
                     });
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  require(x.rank() == 2 && weight.rank() == 2 && x.dim(1) == weight.dim(1),
          "linear: expects x [B,D] and weight [O,D], got " + shape_str(x.shape()) +
              " and " + shape_str(weight.shape()));
  Tensor out = matmul(x, transpose(weight));
  if (!bias.defined()) return out;
  require(bias.shape() == Shape{weight.dim(0)}, "linear: bias shape mismatch");
  return add(out, broadcast_to(reshape(bias, {1, weight.dim(0)}), out.shape()));
}

Tensor conv2d(const Tensor& x, const Tensor& weight, std::size_t stride, std::size_t pad) {
  require(x.rank() == 4 && weight.rank() == 4, "conv2d: expects x [B,C,H,W] and weight "
                                               "[O,C,k,k], got " +
                                                   shape_str(x.shape()) + " and " +
                                                   shape_str(weight.shape()));
  require(weight.dim(1) == x.dim(1), "conv2d: channel mismatch, input has " +
                                         std::to_string(x.dim(1)) + ", weight expects " +
                                         std::to_string(weight.dim(1)));
  require(weight.dim(2) == weight.dim(3), "conv2d: kernel must be square");
  const auto g = kernels::make_conv_geometry(x.dim(0), x.dim(1), x.dim(2), x.dim(3),
                                             weight.dim(0), weight.dim(2), stride, pad);
  std::vector<double> out(g.batch * g.out_channels * g.out_h * g.out_w);
  kernels::conv2d_forward(g, x.data(), weight.data(), out);
  return make_result({g.batch, g.out_channels, g.out_h, g.out_w}, std::move(out), "conv2d",
                     {x, weight}, [g](Node& self) {
                       const auto& xv = self.inputs[0]->value;
                       const auto& wv = self.inputs[1]->value;
                       if (double* gx = grad_of(self, 0)) {
                         std::vector<double> tmp(xv.size());
                         kernels::conv2d_backward_input(g, self.grad, wv, tmp);
                         for (std::size_t i = 0; i < tmp.size(); ++i) gx[i] += tmp[i];
                       }
                       if (double* gw = grad_of(self, 1)) {
                         std::vector<double> tmp(wv.size());
                         kernels::conv2d_backward_weight(g, self.grad, xv, tmp);
                         for (std::size_t i = 0; i < tmp.size(); ++i) gw[i] += tmp[i];
                       }
                     });
}

Tensor add_channel_bias(const Tensor& x, const Tensor& bias) {
  require(x.rank() == 4 && bias.shape() == Shape{x.dim(1)},
          "add_channel_bias: expects x [B,C,H,W] and bias [C]");
  return add(x, broadcast_to(reshape(bias, {1, x.dim(1), 1, 1}), x.shape()));
}

Tensor global_avg_pool(const Tensor& x) {
  require(x.rank() == 4, "global_avg_pool: expects [B,C,H,W], got " + shape_str(x.shape()));
  const std::size_t plane = x.dim(2) * x.dim(3);
  const std::size_t planes = x.dim(0) * x.dim(1);
  std::vector<double> out(planes, 0.0);
  for (std::size_t p = 0; p < planes; ++p) {
    double total = 0.0;
    for (std::size_t i = 0; i < plane; ++i) total += x.data()[p * plane + i];
    out[p] = total / double(plane);
  }
  return make_result({x.dim(0), x.dim(1)}, std::move(out), "global_avg_pool", {x},
                     [plane, planes](Node& self) {
                       if (double* g = grad_of(self, 0))
                         for (std::size_t p = 0; p < planes; ++p)
                           for (std::size_t i = 0; i < plane; ++i)
                             g[p * plane + i] += self.grad[p] / double(plane);
                     });
}

Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  BatchNormStats& stats, BnMode mode) {
  require(x.rank() == 4, "batch_norm: expects [B,C,H,W], got " + shape_str(x.shape()));
  const std::size_t batch = x.dim(0);
  const std::size_t channels = x.dim(1);
  const std::size_t plane = x.dim(2) * x.dim(3);
  require(gamma.shape() == Shape{channels} && beta.shape() == Shape{channels},
          "batch_norm: gamma/beta must have shape [" + std::to_string(channels) + "]");
  require(stats.running_mean.size() == channels && stats.running_var.size() == channels,
          "batch_norm: running statistics sized for a different channel count");
  const std::size_t count = batch * plane;
  const bool use_batch = mode != BnMode::Eval;
  require(!use_batch || count > 1, "batch_norm: batch statistics need more than one value "
                                   "per channel");

  const auto xv = x.data();
  std::vector<double> mu(channels);
  std::vector<double> inv_std(channels);
  for (std::size_t c = 0; c < channels; ++c) {
    if (use_batch) {
      double total = 0.0;
      for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t i = 0; i < plane; ++i) total += xv[(b * channels + c) * plane + i];
      const double m = total / double(count);
      double sq = 0.0;
      for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t i = 0; i < plane; ++i) {
          const double d = xv[(b * channels + c) * plane + i] - m;
          sq += d * d;
        }
      const double var = sq / double(count);
      mu[c] = m;
      inv_std[c] = 1.0 / std::sqrt(var + stats.eps);
      if (mode == BnMode::Train) {
        const double unbiased = sq / double(count - 1);
        stats.running_mean[c] = (1.0 - stats.momentum) * stats.running_mean[c] + stats.momentum * m;
        stats.running_var[c] =
            (1.0 - stats.momentum) * stats.running_var[c] + stats.momentum * unbiased;
      }
    } else {
      mu[c] = stats.running_mean[c];
      inv_std[c] = 1.0 / std::sqrt(stats.running_var[c] + stats.eps);
    }
  }

  std::vector<double> xhat(x.size());
  std::vector<double> out(x.size());
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t c = 0; c < channels; ++c)
      for (std::size_t i = 0; i < plane; ++i) {
        const std::size_t k = (b * channels + c) * plane + i;
        xhat[k] = (xv[k] - mu[c]) * inv_std[c];
        out[k] = gamma.data()[c] * xhat[k] + beta.data()[c];
      }

  return make_result(
      x.shape(), std::move(out), use_batch ? "batch_norm_train" : "batch_norm_eval",
      {x, gamma, beta},
      [=, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node& self) {
        const auto& gv = self.inputs[1]->value;
        const auto& dy = self.grad;
        std::vector<double> sum_dy(channels, 0.0);
        std::vector<double> sum_dy_xhat(channels, 0.0);
        for (std::size_t b = 0; b < batch; ++b)
          for (std::size_t c = 0; c < channels; ++c)
            for (std::size_t i = 0; i < plane; ++i) {
              const std::size_t k = (b * channels + c) * plane + i;
              sum_dy[c] += dy[k];
              sum_dy_xhat[c] += dy[k] * xhat[k];
            }
        if (double* gg = grad_of(self, 1))
          for (std::size_t c = 0; c < channels; ++c) gg[c] += sum_dy_xhat[c];
        if (double* gb = grad_of(self, 2))
          for (std::size_t c = 0; c < channels; ++c) gb[c] += sum_dy[c];
        double* gx = grad_of(self, 0);
        if (!gx) return;
        for (std::size_t b = 0; b < batch; ++b)
          for (std::size_t c = 0; c < channels; ++c)
            for (std::size_t i = 0; i < plane; ++i) {
              const std::size_t k = (b * channels + c) * plane + i;
              if (use_batch) {
                gx[k] += gv[c] * inv_std[c] *
                         (dy[k] - sum_dy[c] / double(count) -
                          xhat[k] * sum_dy_xhat[c] / double(count));
              } else {
                gx[k] += gv[c] * inv_std[c] * dy[k];
              }
            }
      });
}

namespace {
struct InterpTable {
  std::vector<std::size_t> lo;
  std::vector<std::size_t> hi;
  std::vector<double> frac;
};

// align_corners = false: source = (dst + 0.5) * in / out - 0.5, clamped at 0.
InterpTable interp_table(std::size_t in, std::size_t out) {
  InterpTable t;
  const double ratio = double(in) / double(out);
  for (std::size_t i = 0; i < out; ++i) {
    double src = (double(i) + 0.5) * ratio - 0.5;
    if (src < 0.0) src = 0.0;
    std::size_t lo = std::min(std::size_t(src), in - 1);
    std::size_t hi = std::min(lo + 1, in - 1);
    t.lo.push_back(lo);
    t.hi.push_back(hi);
    t.frac.push_back(src - double(lo));
  }
  return t;
}
}  // namespace

Tensor upsample_bilinear(const Tensor& x, std::size_t out_h, std::size_t out_w) {
  require(x.rank() >= 2, "upsample_bilinear: rank must be at least 2");
  const std::size_t in_h = x.dim(x.rank() - 2);
  const std::size_t in_w = x.dim(x.rank() - 1);
  require(in_h > 0 && in_w > 0, "upsample_bilinear: empty source plane");
  require(out_h >= in_h && out_w >= in_w,
          "upsample_bilinear: target " + std::to_string(out_h) + "x" +
              std::to_string(out_w) + " smaller than source " + std::to_string(in_h) +
              "x" + std::to_string(in_w));
  const std::size_t planes = x.size() / (in_h * in_w);
  const InterpTable ty = interp_table(in_h, out_h);
  const InterpTable tx = interp_table(in_w, out_w);
  Shape out_shape = x.shape();
  out_shape[out_shape.size() - 2] = out_h;
  out_shape[out_shape.size() - 1] = out_w;
  std::vector<double> out(planes * out_h * out_w);
  const auto xv = x.data();
  for (std::size_t p = 0; p < planes; ++p) {
    const double* src = xv.data() + p * in_h * in_w;
    for (std::size_t oy = 0; oy < out_h; ++oy)
      for (std::size_t ox = 0; ox < out_w; ++ox) {
        const double fy = ty.frac[oy];
        const double fx = tx.frac[ox];
        const double top = (1.0 - fx) * src[ty.lo[oy] * in_w + tx.lo[ox]] +
                           fx * src[ty.lo[oy] * in_w + tx.hi[ox]];
        const double bottom = (1.0 - fx) * src[ty.hi[oy] * in_w + tx.lo[ox]] +
                              fx * src[ty.hi[oy] * in_w + tx.hi[ox]];
        out[(p * out_h + oy) * out_w + ox] = (1.0 - fy) * top + fy * bottom;
      }
  }
  return make_result(std::move(out_shape), std::move(out), "upsample_bilinear", {x},
                     [=](Node& self) {
                       double* g = grad_of(self, 0);
                       if (!g) return;
                       for (std::size_t p = 0; p < planes; ++p) {
                         double* dst = g + p * in_h * in_w;
                         for (std::size_t oy = 0; oy < out_h; ++oy)
                           for (std::size_t ox = 0; ox < out_w; ++ox) {
                             const double d = self.grad[(p * out_h + oy) * out_w + ox];
                             const double fy = ty.frac[oy];
                             const double fx = tx.frac[ox];
                             dst[ty.lo[oy] * in_w + tx.lo[ox]] += d * (1.0 - fy) * (1.0 - fx);
                             dst[ty.lo[oy] * in_w + tx.hi[ox]] += d * (1.0 - fy) * fx;
                             dst[ty.hi[oy] * in_w + tx.lo[ox]] += d * fy * (1.0 - fx);
                             dst[ty.hi[oy] * in_w + tx.hi[ox]] += d * fy * fx;
                           }
                       }
                     });
}

Tensor cross_entropy_soft(const Tensor& logits, const Tensor& target) {
  require_same_shape(logits, target, "cross_entropy_soft");
  require(logits.rank() == 1 || logits.rank() == 2,
          "cross_entropy_soft: logits must be [K] or [B,K]");
  const std::size_t classes = logits.dim(logits.rank() - 1);
  const std::size_t rows = logits.size() / classes;
  const auto t = target.data();
  for (std::size_t r = 0; r < rows; ++r) {
    double total = 0.0;
    for (std::size_t k = 0; k < classes; ++k) {
      const double v = t[r * classes + k];
      require(v >= 0.0, "cross_entropy_soft: negative target entry in row " + std::to_string(r));
      total += v;
    }
    require(std::abs(total - 1.0) <= 1e-6,
            "cross_entropy_soft: target row " + std::to_string(r) + " sums to " +
                std::to_string(total) + ", not 1");
  }
  const std::size_t axis = logits.rank() - 1;
  return scale(sum_axis(mul(target, log_softmax(logits, axis)), axis), -1.0);
}

Tensor cosine_similarity(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "cosine_similarity");
  require(a.rank() == 1 || a.rank() == 2, "cosine_similarity: expects [D] or [B,D]");
  const std::size_t dims = a.dim(a.rank() - 1);
  const std::size_t rows = a.size() / dims;
  const auto av = a.data();
  const auto bv = b.data();
  std::vector<double> dot(rows, 0.0), na(rows, 0.0), nb(rows, 0.0), out(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t i = 0; i < dims; ++i) {
      const double x = av[r * dims + i];
      const double y = bv[r * dims + i];
      dot[r] += x * y;
      na[r] += x * x;
      nb[r] += y * y;
    }
    if (na[r] == 0.0 || nb[r] == 0.0) {
      throw NonFiniteError("cosine_similarity: zero-norm vector in row " + std::to_string(r));
    }
    na[r] = std::sqrt(na[r]);
    nb[r] = std::sqrt(nb[r]);
    out[r] = dot[r] / (na[r] * nb[r]);
  }
  Shape out_shape = a.rank() == 1 ? Shape{} : Shape{rows};
  return make_result(std::move(out_shape), std::move(out), "cosine_similarity", {a, b},
                     [=](Node& self) {
                       const auto& x = self.inputs[0]->value;
                       const auto& y = self.inputs[1]->value;
                       double* ga = grad_of(self, 0);
                       double* gb = grad_of(self, 1);
                       for (std::size_t r = 0; r < rows; ++r) {
                         const double d = self.grad[r];
                         const double cosv = self.value[r];
                         const double inv = 1.0 / (na[r] * nb[r]);
                         for (std::size_t i = 0; i < dims; ++i) {
                           const std::size_t k = r * dims + i;
                           if (ga) ga[k] += d * (y[k] * inv - cosv * x[k] / (na[r] * na[r]));
                           if (gb) gb[k] += d * (x[k] * inv - cosv * y[k] / (nb[r] * nb[r]));
                         }
                       }
                     });
}

}  // namespace adamix::ops
