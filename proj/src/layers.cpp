#include "iadc/layers.hpp"

#include <cmath>

namespace iadc {

template <typename T>
Tensor<T> kaiming_uniform(const Shape& shape, std::size_t fan_in, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::vector<T> v(shape_numel(shape));
  for (auto& e : v) e = static_cast<T>(rng.uniform(-bound, bound));
  return Tensor<T>(shape, std::move(v));
}

template <typename T>
ConvBn<T> ConvBn<T>::make(std::size_t cin, std::size_t cout, std::size_t kernel, Rng& rng) {
  ConvBn c;
  c.weight = kaiming_uniform<T>({cout, cin, kernel, kernel}, cin * kernel * kernel, rng);
  c.gamma = Tensor<T>({cout}, T(1));
  c.beta = Tensor<T>({cout}, T(0));
  c.stats = BatchNormState<T>(cout);
  for (auto* t : {&c.weight, &c.gamma, &c.beta}) t->set_requires_grad();
  return c;
}

template <typename T>
Tensor<T> ConvBn<T>::forward(const Tensor<T>& x, NormMode mode) {
  const std::size_t pad = weight.dim(2) / 2;
  return batchnorm2d(conv2d(x, weight, std::nullopt, 1, pad), gamma, beta, stats, mode);
}

template <typename T>
void ConvBn<T>::visit_params(const std::string& prefix, const ParamVisitor<T>& f) {
  f(prefix + ".weight", weight);
  f(prefix + ".bn.gamma", gamma);
  f(prefix + ".bn.beta", beta);
}

template <typename T>
void ConvBn<T>::visit_buffers(const std::string& prefix, const ParamVisitor<T>& f) {
  f(prefix + ".bn.running_mean", stats.running_mean);
  f(prefix + ".bn.running_var", stats.running_var);
}

template Tensor<float> kaiming_uniform<float>(const Shape&, std::size_t, Rng&);
template Tensor<double> kaiming_uniform<double>(const Shape&, std::size_t, Rng&);
template struct ConvBn<float>;
template struct ConvBn<double>;

}  // namespace iadc
