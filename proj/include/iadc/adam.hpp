#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "iadc/tensor.hpp"

namespace iadc {

struct AdamHyper {
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// One bias-corrected Adam update of `param` in place; `step` counts from 1.
template <typename T>
void adam_update(std::span<T> param, std::span<const T> grad, std::span<T> m, std::span<T> v, std::uint64_t step,
                 const AdamHyper& hyper);

/// Adam over a fixed list of named parameters. A parameter without a
/// gradient is treated as having a zero gradient.
template <typename T>
class Adam {
 public:
  Adam() = default;
  Adam(std::vector<std::pair<std::string, Tensor<T>>> params, AdamHyper hyper);

  void step();
  void zero_grad();

  std::uint64_t steps_taken() const { return t_; }
  void set_steps_taken(std::uint64_t t) { t_ = t; }
  const AdamHyper& hyper() const { return hyper_; }

  // First and second moment buffers, aligned with the parameter list.
  std::vector<std::pair<std::string, Tensor<T>>>& first_moments() { return m_; }
  std::vector<std::pair<std::string, Tensor<T>>>& second_moments() { return v_; }

 private:
  std::vector<std::pair<std::string, Tensor<T>>> params_;
  std::vector<std::pair<std::string, Tensor<T>>> m_;
  std::vector<std::pair<std::string, Tensor<T>>> v_;
  AdamHyper hyper_;
  std::uint64_t t_ = 0;
};

}  // namespace iadc
