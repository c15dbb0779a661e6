#include "iadc/adam.hpp"

#include <cmath>

namespace iadc {

template <typename T>
void adam_update(std::span<T> param, std::span<const T> grad, std::span<T> m, std::span<T> v, std::uint64_t step,
                 const AdamHyper& hyper) {
  if (grad.size() != param.size() || m.size() != param.size() || v.size() != param.size())
    throw ShapeError("adam_update: parameter has " + std::to_string(param.size()) + " values but gradient/state have " +
                     std::to_string(grad.size()) + "/" + std::to_string(m.size()) + "/" + std::to_string(v.size()));
  if (step == 0) throw std::invalid_argument("adam_update: step counts from 1");
  const double c1 = 1.0 - std::pow(hyper.beta1, static_cast<double>(step));
  const double c2 = 1.0 - std::pow(hyper.beta2, static_cast<double>(step));
  for (std::size_t i = 0; i < param.size(); ++i) {
    const double g = static_cast<double>(grad[i]);
    const double mi = hyper.beta1 * static_cast<double>(m[i]) + (1.0 - hyper.beta1) * g;
    const double vi = hyper.beta2 * static_cast<double>(v[i]) + (1.0 - hyper.beta2) * g * g;
    m[i] = static_cast<T>(mi);
    v[i] = static_cast<T>(vi);
    const double m_hat = mi / c1, v_hat = vi / c2;
    param[i] = static_cast<T>(static_cast<double>(param[i]) - hyper.learning_rate * m_hat / (std::sqrt(v_hat) + hyper.eps));
  }
}

template <typename T>
Adam<T>::Adam(std::vector<std::pair<std::string, Tensor<T>>> params, AdamHyper hyper)
    : params_(std::move(params)), hyper_(hyper) {
  if (!(hyper_.learning_rate > 0.0)) throw std::invalid_argument("learning_rate must be positive");
  for (const auto& [name, p] : params_) {
    m_.emplace_back(name, Tensor<T>(p.shape(), T(0)));
    v_.emplace_back(name, Tensor<T>(p.shape(), T(0)));
  }
}

template <typename T>
void Adam<T>::step() {
  ++t_;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Tensor<T>& p = params_[i].second;
    std::vector<T> zeros;
    std::span<const T> g = p.grad();
    if (!p.has_grad()) {
      zeros.assign(p.size(), T(0));
      g = zeros;
    }
    adam_update<T>(p.mutable_data(), g, m_[i].second.mutable_data(), v_[i].second.mutable_data(), t_, hyper_);
  }
}

template <typename T>
void Adam<T>::zero_grad() {
  for (auto& [name, p] : params_) p.zero_grad();
}

template void adam_update<float>(std::span<float>, std::span<const float>, std::span<float>, std::span<float>,
                                 std::uint64_t, const AdamHyper&);
template void adam_update<double>(std::span<double>, std::span<const double>, std::span<double>, std::span<double>,
                                  std::uint64_t, const AdamHyper&);
template class Adam<float>;
template class Adam<double>;

}  // namespace iadc
