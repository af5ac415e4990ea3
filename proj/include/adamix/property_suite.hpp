#pragma once

#include <cstddef>
#include <string>
#include <vector>

// Property and oracle suites shared by the `selftest` subcommand and the
// acceptance binary. Each check reports its measured value next to the
// threshold it was held to.

namespace adamix {

struct CheckResult {
  std::string name;
  double value = 0.0;
  double threshold = 0.0;
  bool passed = false;
  std::string detail;
};

/// Every differentiable operation against central differences (< 1e-5).
std::vector<CheckResult> operation_gradient_suite(std::size_t seeds);

/// Classifier objective w.r.t. W and generator objective w.r.t. theta
/// against central differences (< 1e-4).
std::vector<CheckResult> composite_gradient_suite(std::size_t seeds);

/// Random (theta, input) draws with N in 2..5: masks sum to 1 across N
/// (< 1e-5) and every mixed pixel lies within its sources (< 1e-6).
std::vector<CheckResult> mask_normalization_suite(std::size_t draws);

/// Five classifier descent steps (rate 1e-4) strictly lower the classifier
/// objective and five generator ascent steps (rate 1e-4) do not lower the
/// generator objective, each on at least 4 of `seeds` seeds.
std::vector<CheckResult> directionality_suite(std::size_t seeds);

/// Over `batches` batches: classifier steps leave theta, teacher and encoder
/// bitwise unchanged, generator steps leave classifier, teacher and encoder
/// unchanged, and EMA results equal the clamped convex combination.
std::vector<CheckResult> isolation_suite(std::size_t batches);

/// Metrics against hand-computed values: ECE binning, top-k enumeration,
/// the FGSM eps ball and linear-model gradient sign, occlusion at ratio 0.
std::vector<CheckResult> metric_oracle_suite();

/// All of the above at their default sizes.
std::vector<CheckResult> property_suites();

}  // namespace adamix
