#pragma once

#include <random>

#include "iadc/tensor.hpp"

namespace iadc::testing {

inline Tensor<double> random_tensor(const Shape& shape, unsigned seed, double lo = -1.0, double hi = 1.0) {
  std::mt19937_64 gen(seed);
  std::uniform_real_distribution<double> dist(lo, hi);
  std::vector<double> v(shape_numel(shape));
  for (auto& e : v) e = dist(gen);
  return Tensor<double>(shape, std::move(v));
}

}  // namespace iadc::testing
