#pragma once

#include <vector>

#include "iadc/layers.hpp"

namespace iadc {

struct UNetConfig {
  std::vector<std::size_t> enc_channels{8, 16, 32, 64, 128};
  std::size_t in_channels = 5;
  std::size_t kernel = 3;
  double depth_scale = 80.0;  // meters per normalized depth unit

  static constexpr std::size_t kLevels = 5;

  std::size_t feature_channels() const { return enc_channels.front(); }
  // Spatial extents must be divisible by this (four 2× poolings).
  static constexpr std::size_t divisor() { return std::size_t{1} << (kLevels - 1); }
  void validate() const;
};

template <typename T>
struct UNetOutput {
  Tensor<T> f_depth;  // B×C_d×H×W
  Tensor<T> d_init;   // B×1×H×W, meters
};

/// Encoder: five [conv-BN-ReLU ×2] levels with 2× max-pooling between them.
/// Decoder: four [transposed conv ×2 → concat skip → conv-BN-ReLU] stages.
/// A 1×1 convolution of the top decoder features gives the initial depth.
template <typename T>
struct UNetParams {
  struct EncoderLevel {
    ConvBn<T> first;
    ConvBn<T> second;
  };
  struct DecoderStage {
    Tensor<T> up;  // C_{l+1}×C_l×2×2 transposed-conv weight
    ConvBn<T> merge;
  };

  UNetConfig config;
  std::vector<EncoderLevel> encoder;   // level 0 = full resolution
  std::vector<DecoderStage> decoder;   // decoder[l] produces level l
  Tensor<T> head_weight;               // 1×C_d×1×1
  Tensor<T> head_bias;                 // 1

  static UNetParams make(const UNetConfig& config, Rng& rng);
  void visit_params(const std::string& prefix, const ParamVisitor<T>& f);
  void visit_buffers(const std::string& prefix, const ParamVisitor<T>& f);
};

/// Concat(rgb, depth_sparse / depth_scale, validity) → B×5×H×W.
template <typename T>
Tensor<T> stack_input(const Tensor<T>& rgb, const Tensor<T>& depth_sparse, const Tensor<T>& validity,
                      double depth_scale);

template <typename T>
UNetOutput<T> unet_forward(const Tensor<T>& x, UNetParams<T>& params, NormMode mode);

// Closed-form learnable parameter count for a configuration.
std::size_t unet_parameter_count(const UNetConfig& config);

}  // namespace iadc
