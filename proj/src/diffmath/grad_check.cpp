#include "adamix/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace adamix {

double grad_check(const std::function<Tensor()>& f, std::vector<Tensor> params,
                  const GradCheckOptions& options) {
  for (auto& p : params) {
    if (!p.is_leaf() || !p.requires_grad()) {
      throw Error("grad_check: parameters must be leaves that require grad");
    }
    p.zero_grad();
  }
  const Tensor root = f();
  root.backward();
  std::vector<std::vector<double>> analytic;
  for (const auto& p : params) {
    analytic.emplace_back(p.grad().begin(), p.grad().end());
  }

  auto evaluate = [&](std::size_t tensor, std::size_t coord) {
    NoGradGuard no_grad;
    const double v = f().item();
    if (!std::isfinite(v)) {
      throw Error("grad_check: non-finite value with tensor " + std::to_string(tensor) +
                  " coordinate " + std::to_string(coord) + " perturbed");
    }
    return v;
  };

  double worst = 0.0;
  for (std::size_t t = 0; t < params.size(); ++t) {
    auto data = params[t].mutable_data();
    const std::size_t n = data.size();
    std::size_t stride = 1;
    if (options.max_coordinates > 0 && n > options.max_coordinates) {
      stride = (n + options.max_coordinates - 1) / options.max_coordinates;
    }
    for (std::size_t i = 0; i < n; i += stride) {
      const double saved = data[i];
      data[i] = saved + options.eps;
      const double plus = evaluate(t, i);
      data[i] = saved - options.eps;
      const double minus = evaluate(t, i);
      data[i] = saved;
      const double numeric = (plus - minus) / (2.0 * options.eps);
      const double err = std::abs(analytic[t][i] - numeric) / std::max(1.0, std::abs(numeric));
      worst = std::max(worst, err);
    }
  }
  return worst;
}

double grad_check(const std::function<Tensor(const Tensor&)>& f, Tensor x, double eps) {
  if (!x.requires_grad()) x.set_requires_grad(true);
  GradCheckOptions options;
  options.eps = eps;
  return grad_check([&] { return f(x); }, {x}, options);
}

}  // namespace adamix
