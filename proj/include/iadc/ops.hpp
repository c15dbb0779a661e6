#pragma once

#include <optional>
#include <string_view>
#include <type_traits>

#include "iadc/tensor.hpp"

namespace iadc {

enum class UnaryKind { relu, sigmoid, abs, square, neg };
enum class BinaryKind { add, sub, mul, div };

// Throws std::invalid_argument for names outside the supported set.
UnaryKind parse_unary_kind(std::string_view name);
BinaryKind parse_binary_kind(std::string_view name);

template <typename T>
Tensor<T> unary(UnaryKind kind, const Tensor<T>& x);

/// Numpy-style broadcasting (right-aligned axes, extent 1 stretches).
template <typename T>
Tensor<T> binary(BinaryKind kind, const Tensor<T>& a, const Tensor<T>& b);

// String-keyed entry point; `b` must be present exactly for binary kinds.
template <typename T>
Tensor<T> elementwise(std::string_view kind, const Tensor<T>& a,
                      const std::optional<std::type_identity_t<Tensor<T>>>& b = std::nullopt);

template <typename T> Tensor<T> relu(const Tensor<T>& x) { return unary(UnaryKind::relu, x); }
template <typename T> Tensor<T> sigmoid(const Tensor<T>& x) { return unary(UnaryKind::sigmoid, x); }
template <typename T> Tensor<T> abs(const Tensor<T>& x) { return unary(UnaryKind::abs, x); }
template <typename T> Tensor<T> square(const Tensor<T>& x) { return unary(UnaryKind::square, x); }
template <typename T> Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) { return binary(BinaryKind::add, a, b); }
template <typename T> Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) { return binary(BinaryKind::sub, a, b); }
template <typename T> Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) { return binary(BinaryKind::mul, a, b); }
template <typename T> Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b) { return binary(BinaryKind::div, a, b); }

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T factor);

template <typename T>
Tensor<T> sum(const Tensor<T>& x);

template <typename T>
Tensor<T> mean(const Tensor<T>& x);

// Same values, new shape with equal element count.
template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape);

// Swaps the last two axes of a rank-2 or rank-3 tensor.
template <typename T>
Tensor<T> transpose(const Tensor<T>& x);

/// (N×K)·(K×M), or batched (B×N×K)·(B×K×M).
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);

/// Cross-correlation. weight is Cout×Cin×k×k; bias (Cout) may be empty.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& weight,
                 const std::optional<std::type_identity_t<Tensor<T>>>& bias, std::size_t stride,
                 std::size_t padding);

/// Adjoint of conv2d without padding. weight is Cin×Cout×k×k (the same
/// memory as the conv2d weight whose input-gradient this computes).
template <typename T>
Tensor<T> conv_transpose2d(const Tensor<T>& x, const Tensor<T>& weight,
                           std::size_t stride);

// 2×2 window, stride 2; ties route the gradient to the first element in
// row-major order.
template <typename T>
Tensor<T> maxpool2(const Tensor<T>& x);

/// Softmax over the last axis, computed with max subtraction.
template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& x);

enum class NormMode { train, eval };

template <typename T>
struct BatchNormState {
  Tensor<T> running_mean;
  Tensor<T> running_var;

  BatchNormState() = default;
  explicit BatchNormState(std::size_t channels)
      : running_mean(Shape{channels}, T(0)), running_var(Shape{channels}, T(1)) {}
};

inline constexpr double kBatchNormEps = 1e-5;
inline constexpr double kBatchNormMomentum = 0.1;

/// Per-channel normalization over batch×H×W. In train mode the batch
/// statistics normalize the input and update `state` (unbiased variance for
/// the running estimate); eval mode uses `state` unchanged.
template <typename T>
Tensor<T> batchnorm2d(const Tensor<T>& x, const Tensor<T>& gamma,
                      const Tensor<T>& beta, BatchNormState<T>& state,
                      NormMode mode);

template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> slice_channels(const Tensor<T>& x, std::size_t begin, std::size_t count);

enum class InterpMode { nearest, bilinear };

// Bilinear follows the align_corners=false pixel-centre convention.
template <typename T>
Tensor<T> interpolate(const Tensor<T>& x, std::size_t out_h, std::size_t out_w,
                      InterpMode mode);

template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& x);

}  // namespace iadc
