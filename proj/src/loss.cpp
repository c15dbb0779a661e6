#include "iadc/loss.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace iadc {

void LossWeights::validate() const {
  if (!(lambda_init >= 0.0) || !(lambda_obj >= 0.0) || !(lambda_seg >= 0.0))
    throw std::invalid_argument("loss weights must be non-negative");
}

template <typename T>
Tensor<T> masked_weighted_loss(const Tensor<T>& pred, const Tensor<T>& gt, const Tensor<T>& foreground,
                               double lambda_obj, LossKind kind) {
  if (pred.shape() != gt.shape() || foreground.shape() != gt.shape())
    throw ShapeError("masked loss: pred " + shape_to_string(pred.shape()) + ", gt " + shape_to_string(gt.shape()) +
                     " and mask " + shape_to_string(foreground.shape()) + " must match");
  auto g = gt.data();
  auto m = foreground.data();
  std::vector<T> w(g.size(), T(0));
  double total = 0.0;
  for (std::size_t i = 0; i < g.size(); ++i) {
    if (!(g[i] > T(0))) continue;
    const double wi = m[i] > T(0.5) ? lambda_obj : 1.0;
    w[i] = static_cast<T>(wi);
    total += wi;
  }
  if (!(total > 0.0)) throw std::domain_error("masked loss: no pixel with positive ground-truth depth (or zero total weight)");
  Tensor<T> residual = sub(pred, gt);
  Tensor<T> penalty = kind == LossKind::l1 ? abs(residual) : square(residual);
  Tensor<T> weighted = mul(penalty, Tensor<T>(gt.shape(), std::move(w)));
  return scale(sum(weighted), static_cast<T>(1.0 / total));
}

template <typename T>
double binary_cross_entropy(const Tensor<T>& prob, const Tensor<T>& target) {
  if (prob.shape() != target.shape())
    throw ShapeError("binary_cross_entropy: " + shape_to_string(prob.shape()) + " vs " +
                     shape_to_string(target.shape()));
  constexpr double kFloor = 1e-12;
  auto p = prob.data();
  auto y = target.data();
  double acc = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double pi = static_cast<double>(p[i]), yi = static_cast<double>(y[i]);
    if (yi > 0.0) acc += yi * -std::log(std::max(pi, kFloor));
    if (yi < 1.0) acc += (1.0 - yi) * -std::log(std::max(1.0 - pi, kFloor));
  }
  return acc / static_cast<double>(p.size());
}

template <typename T>
LossTerms<T> total_loss(const Tensor<T>& d_init, const Tensor<T>& d_final, const Tensor<T>& gt, const Tensor<T>& m_seg,
                        const Tensor<T>& gt_foreground, const LossWeights& weights, LossKind kind) {
  weights.validate();
  LossTerms<T> out;
  Tensor<T> final_loss = masked_weighted_loss(d_final, gt, m_seg, weights.lambda_obj, kind);
  out.final_term = static_cast<double>(final_loss.item());
  out.total = final_loss;
  if (weights.lambda_init != 0.0) {
    Tensor<T> init_loss = masked_weighted_loss(d_init, gt, m_seg, weights.lambda_obj, kind);
    out.init_term = static_cast<double>(init_loss.item());
    out.total = add(out.total, scale(init_loss, static_cast<T>(weights.lambda_init)));
  } else {
    NoGradScope<T> no_grad;
    out.init_term = static_cast<double>(masked_weighted_loss(d_init, gt, m_seg, weights.lambda_obj, kind).item());
  }
  out.seg_term = binary_cross_entropy(m_seg, gt_foreground);
  if (weights.lambda_seg != 0.0 && out.seg_term != 0.0)
    out.total = add(out.total, Tensor<T>(Shape{1}, static_cast<T>(weights.lambda_seg * out.seg_term)));
  return out;
}

template <typename T>
Metrics evaluate(std::span<const T> pred, std::span<const T> gt) {
  if (pred.size() != gt.size())
    throw ShapeError("evaluate: prediction has " + std::to_string(pred.size()) + " values, ground truth " +
                     std::to_string(gt.size()));
  double abs_sum = 0.0, sq_sum = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    if (!(gt[i] > T(0))) continue;
    const double d = static_cast<double>(pred[i]) - static_cast<double>(gt[i]);
    abs_sum += std::abs(d);
    sq_sum += d * d;
    ++n;
  }
  if (n == 0) throw std::domain_error("evaluate: no pixel with positive ground-truth depth");
  return {abs_sum / static_cast<double>(n), std::sqrt(sq_sum / static_cast<double>(n)), n};
}

template <typename T>
Metrics evaluate(const Tensor<T>& pred, const Tensor<T>& gt) {
  if (pred.shape() != gt.shape())
    throw ShapeError("evaluate: " + shape_to_string(pred.shape()) + " vs " + shape_to_string(gt.shape()));
  return evaluate<T>(pred.data(), gt.data());
}

void MetricsAccumulator::add(const Metrics& m) {
  const double n = static_cast<double>(m.n_valid);
  abs_sum_ += m.mae * n;
  sq_sum_ += m.rmse * m.rmse * n;
  n_ += m.n_valid;
  ++samples_;
}

Metrics MetricsAccumulator::result() const {
  if (n_ == 0) throw std::domain_error("no valid pixels accumulated");
  const double n = static_cast<double>(n_);
  return {abs_sum_ / n, std::sqrt(sq_sum_ / n), n_};
}

#define IADC_INSTANTIATE_LOSS(T)                                                                                  \
  template Tensor<T> masked_weighted_loss(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, double, LossKind); \
  template double binary_cross_entropy(const Tensor<T>&, const Tensor<T>&);                                       \
  template LossTerms<T> total_loss(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,         \
                                   const Tensor<T>&, const LossWeights&, LossKind);                               \
  template Metrics evaluate(std::span<const T>, std::span<const T>);                                              \
  template Metrics evaluate(const Tensor<T>&, const Tensor<T>&);

IADC_INSTANTIATE_LOSS(float)
IADC_INSTANTIATE_LOSS(double)

}  // namespace iadc
