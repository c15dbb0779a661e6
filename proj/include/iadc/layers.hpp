#pragma once

#include <functional>
#include <string>

#include "iadc/ops.hpp"
#include "iadc/rng.hpp"

namespace iadc {

template <typename T>
using ParamVisitor = std::function<void(const std::string& name, Tensor<T>& tensor)>;

/// Uniform(−1/√fan_in, 1/√fan_in): the fan-in Kaiming-uniform rule with
/// negative slope √5, as used by the common deep-learning default.
template <typename T>
Tensor<T> kaiming_uniform(const Shape& shape, std::size_t fan_in, Rng& rng);

/// Bias-free 3×3 (or 1×1) convolution followed by batch normalization.
template <typename T>
struct ConvBn {
  Tensor<T> weight;
  Tensor<T> gamma;
  Tensor<T> beta;
  BatchNormState<T> stats;

  static ConvBn make(std::size_t cin, std::size_t cout, std::size_t kernel, Rng& rng);
  Tensor<T> forward(const Tensor<T>& x, NormMode mode);  // conv → batchnorm (no activation)
  void visit_params(const std::string& prefix, const ParamVisitor<T>& f);
  void visit_buffers(const std::string& prefix, const ParamVisitor<T>& f);
};

}  // namespace iadc
