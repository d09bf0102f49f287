#pragma once

#include <functional>
#include <span>

#include "tsc/tensor.hpp"

namespace tsc {

struct GradCheckOptions {
  double step = 1e-5;
  /// Floor added to |analytic| in the relative-error denominator.
  double epsilon = 1e-6;
};

/// Largest relative disagreement between the autodiff gradient of a scalar
/// function and its central finite difference,
///   max_i |g_i - (f(x + h e_i) - f(x - h e_i)) / 2h| / (|g_i| + epsilon).
double finite_difference_check(const std::function<Tensor<double>(const Tensor<double>&)>& f,
                               const Tensor<double>& x, GradCheckOptions options = {});

/// Same check against leaf parameters that `loss` reads. Each parameter is
/// perturbed in place and restored.
double finite_difference_check(const std::function<Tensor<double>()>& loss,
                               std::span<Tensor<double>> parameters,
                               GradCheckOptions options = {});

}  // namespace tsc
