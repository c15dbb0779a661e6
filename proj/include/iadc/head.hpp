#pragma once

#include "iadc/layers.hpp"

namespace iadc {

struct HeadConfig {
  std::size_t in_channels = 128;  // C_f
  std::size_t reduction = 16;     // r
  std::size_t mid_channels = 64;
  double depth_scale = 80.0;

  std::size_t bottleneck() const { return in_channels / reduction; }
  void validate() const;
};

/// Squeeze-and-excitation gate followed by conv3×3-BN-ReLU and a final
/// conv3×3 to one channel.
template <typename T>
struct HeadParams {
  HeadConfig config;
  Tensor<T> w1;  // (C/r)×C
  Tensor<T> w2;  // C×(C/r)
  ConvBn<T> conv1;
  Tensor<T> conv2_weight;  // 1×mid×3×3
  Tensor<T> conv2_bias;    // 1

  static HeadParams make(const HeadConfig& config, Rng& rng);
  void visit_params(const std::string& prefix, const ParamVisitor<T>& f);
  void visit_buffers(const std::string& prefix, const ParamVisitor<T>& f) { conv1.visit_buffers(prefix + ".conv1", f); }
};

template <typename T>
struct ChannelAttention {
  Tensor<T> output;  // s ⊙ input, B×C×H×W
  Tensor<T> gate;    // s, B×C, strictly inside (0, 1)
};

template <typename T>
ChannelAttention<T> channel_attention(const Tensor<T>& f_fused, const HeadParams<T>& params);

// Final depth in meters, B×1×H×W. No output activation.
template <typename T>
Tensor<T> head_forward(const Tensor<T>& f_fused, HeadParams<T>& params, NormMode mode);

}  // namespace iadc
