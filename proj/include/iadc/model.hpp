#pragma once

#include <cstdint>

#include "iadc/attention.hpp"
#include "iadc/head.hpp"
#include "iadc/unet.hpp"

namespace iadc {

/// Architecture hyperparameters of the full network.
struct ModelConfig {
  std::vector<std::size_t> enc_channels{8, 16, 32, 64, 128};
  double depth_scale = 80.0;
  std::size_t attn_dim = 32;
  std::size_t attn_height = 16;
  std::size_t attn_width = 32;
  InterpMode attn_mask_downsample = InterpMode::bilinear;
  bool attention_enabled = true;  // false replaces F_att with zeros
  std::size_t fusion_channels = 128;
  std::size_t se_reduction = 16;
  std::size_t head_mid_channels = 64;

  UNetConfig unet() const;
  AttentionConfig attention() const;
  FusionConfig fusion() const;
  HeadConfig head() const;
  void validate() const;
};

template <typename T>
struct ModelInput {
  Tensor<T> rgb;           // B×3×H×W in [0,1]
  Tensor<T> depth_sparse;  // B×1×H×W, meters
  Tensor<T> validity;      // B×1×H×W, {0,1}
  Tensor<T> m_seg;         // B×1×H×W merged instance mask at input resolution
};

template <typename T>
struct ModelOutput {
  Tensor<T> d_init;     // meters
  Tensor<T> d_final;    // meters
  Tensor<T> f_depth;
  Tensor<T> f_att;
  Tensor<T> f_fused;
  Tensor<T> attention;  // B×N×N, empty when attention is disabled
};

template <typename T>
class Model {
 public:
  Model() = default;
  Model(const ModelConfig& config, std::uint64_t seed);

  const ModelConfig& config() const { return config_; }

  ModelOutput<T> forward(const ModelInput<T>& input, NormMode mode);

  // Visits learnable tensors (and batch-norm running statistics) in a fixed
  // order with stable dotted names.
  void visit_params(const ParamVisitor<T>& f);
  void visit_buffers(const ParamVisitor<T>& f);
  std::vector<std::pair<std::string, Tensor<T>>> named_params();
  std::size_t parameter_count();

  UNetParams<T>& unet() { return unet_; }
  AttentionParams<T>& attention() { return attention_; }
  FusionParams<T>& fusion() { return fusion_; }
  HeadParams<T>& head() { return head_; }

 private:
  ModelConfig config_;
  UNetParams<T> unet_;
  AttentionParams<T> attention_;
  FusionParams<T> fusion_;
  HeadParams<T> head_;
};

}  // namespace iadc
