#pragma once

#include <cstddef>
#include <functional>

#include "provp/graph.hpp"
#include "provp/tensor.hpp"

namespace provp {

/// Builds a scalar from `x` inside `g`. Must be deterministic.
using ScalarFunction = std::function<Var(Graph& g, Var x)>;

struct GradCheckOptions {
  double step = 1e-5;
  double tolerance = 1e-6;
  /// Denominator floor for the relative error.
  double floor = 1e-8;
};

struct GradCheckReport {
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  std::size_t worst_index = 0;
  bool pass = false;
  Tensor autodiff;
  Tensor numeric;
};

/// Compares the reverse-mode gradient of f at x against central differences.
///
/// Per element: |a - n| / max(|a|, |n|, floor); pass iff the maximum over all
/// elements is within tolerance. Throws EvaluationError if f is non-finite at
/// x or at any probe point.
GradCheckReport finite_difference_check(const ScalarFunction& f, const Tensor& x,
                                        const GradCheckOptions& options = {});

}  // namespace provp
