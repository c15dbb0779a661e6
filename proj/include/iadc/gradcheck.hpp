#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "iadc/tensor.hpp"

namespace iadc {

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  double analytic_at_worst = 0.0;
  double numeric_at_worst = 0.0;
  std::size_t checked = 0;
};

using ScalarFn = std::function<Tensor<double>(const Tensor<double>&)>;

/// Compares the taped gradient of scalar `f` at `x` with central differences.
///
/// Per coordinate the error is |analytic − numeric| / max(|analytic|, |numeric|, 1e-8);
/// the maximum over coordinates is reported. `f` must be deterministic.
GradCheckResult finite_difference_check(const ScalarFn& f, const Tensor<double>& x, double step = 1e-6);

// Variant for closures over model parameters: perturbs the listed coordinates
// of `params` in place (restoring them) and compares against one taped pass.
struct ParamCoordinate {
  std::size_t tensor;
  std::size_t index;
};

GradCheckResult finite_difference_check(const std::function<Tensor<double>()>& loss_fn,
                                        std::vector<Tensor<double>> params,
                                        const std::vector<ParamCoordinate>& coords, double step = 1e-6);

double relative_error(double analytic, double numeric);

}  // namespace iadc
