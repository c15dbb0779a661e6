#pragma once

#include <cstddef>
#include <span>

#include "iadc/ops.hpp"

namespace iadc {

enum class LossKind { l1, l2 };

struct LossWeights {
  double lambda_init = 0.5;
  double lambda_obj = 3.0;
  double lambda_seg = 1.0;

  void validate() const;
};

/// Σ_Ω w·ρ(pred − gt) / Σ_Ω w over Ω = {gt > 0}, with w = lambda_obj where
/// `foreground` is 1 and 1 elsewhere; ρ is |·| (l1) or (·)² (l2).
/// Throws std::domain_error when Ω is empty.
template <typename T>
Tensor<T> masked_weighted_loss(const Tensor<T>& pred, const Tensor<T>& gt, const Tensor<T>& foreground,
                               double lambda_obj, LossKind kind = LossKind::l1);

template <typename T>
Tensor<T> masked_weighted_l1(const Tensor<T>& pred, const Tensor<T>& gt, const Tensor<T>& foreground,
                             double lambda_obj) {
  return masked_weighted_loss(pred, gt, foreground, lambda_obj, LossKind::l1);
}

/// Mean binary cross-entropy; log arguments are clamped at 1e-12 so that
/// exact {0,1} agreement yields exactly 0.
template <typename T>
double binary_cross_entropy(const Tensor<T>& prob, const Tensor<T>& target);

template <typename T>
struct LossTerms {
  Tensor<T> total;     // differentiable
  double final_term = 0.0;
  double init_term = 0.0;
  double seg_term = 0.0;  // monitoring only; carries no gradient
};

/// final + lambda_init·init + lambda_seg·BCE(m_seg, gt_foreground).
template <typename T>
LossTerms<T> total_loss(const Tensor<T>& d_init, const Tensor<T>& d_final, const Tensor<T>& gt, const Tensor<T>& m_seg,
                        const Tensor<T>& gt_foreground, const LossWeights& weights, LossKind kind = LossKind::l1);

struct Metrics {
  double mae = 0.0;
  double rmse = 0.0;
  std::size_t n_valid = 0;
};

/// MAE and RMSE over pixels with gt > 0. Throws std::domain_error when none.
template <typename T>
Metrics evaluate(std::span<const T> pred, std::span<const T> gt);

template <typename T>
Metrics evaluate(const Tensor<T>& pred, const Tensor<T>& gt);

/// Pools per-sample results into valid-pixel-weighted aggregate metrics.
class MetricsAccumulator {
 public:
  void add(const Metrics& m);
  Metrics result() const;
  std::size_t count() const { return samples_; }

 private:
  double abs_sum_ = 0.0;
  double sq_sum_ = 0.0;
  std::size_t n_ = 0;
  std::size_t samples_ = 0;
};

}  // namespace iadc
