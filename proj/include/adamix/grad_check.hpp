#pragma once

#include <cstddef>
#include <functional>
#include <vector>

#include "adamix/tensor.hpp"

namespace adamix {

struct GradCheckOptions {
  double eps = 1e-6;
  // 0 checks every coordinate; otherwise an evenly strided subset per tensor.
  std::size_t max_coordinates = 0;
};

/// Compares reverse-mode gradients of a scalar function against central
/// differences. `f` must recompute its value from the current contents of
/// `params`. Returns max |analytic - numeric| / max(1, |numeric|).
double grad_check(const std::function<Tensor()>& f, std::vector<Tensor> params,
                  const GradCheckOptions& options = {});

/// Single-input form: f(x) with x perturbed in place.
double grad_check(const std::function<Tensor(const Tensor&)>& f, Tensor x,
                  double eps = 1e-6);

}  // namespace adamix
