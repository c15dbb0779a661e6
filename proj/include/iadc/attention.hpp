#pragma once

#include "iadc/layers.hpp"

namespace iadc {

struct AttentionConfig {
  std::size_t depth_channels = 8;  // C_d
  std::size_t embed_dim = 32;      // C_a
  std::size_t work_h = 16;
  std::size_t work_w = 32;
  // Kernel used to bring the mask down to the working grid.
  InterpMode mask_downsample = InterpMode::bilinear;

  void validate() const;
};

/// 1×1 projections: query from the mask, key/value from depth features, and
/// the output projection back to C_d channels. Only the query has a bias:
/// softmax ignores a per-row score shift, a value shift passes through the
/// row-stochastic attention unchanged, and a uniform shift of F_att is removed
/// by the fusion batch norm.
template <typename T>
struct AttentionParams {
  AttentionConfig config;
  Tensor<T> wq, bq;      // C_a×1×1×1
  Tensor<T> wk;          // C_a×C_d×1×1
  Tensor<T> wv;          // C_a×C_d×1×1
  Tensor<T> wout;        // C_d×C_a×1×1

  static AttentionParams make(const AttentionConfig& config, Rng& rng);
  void visit_params(const std::string& prefix, const ParamVisitor<T>& f);
};

template <typename T>
struct AttentionOutput {
  Tensor<T> features;   // B×C_d×h×w
  Tensor<T> attention;  // B×N×N, rows are distributions over keys
  Tensor<T> values;     // B×N×C_a (V')
  Tensor<T> attended;   // B×N×C_a (O' = A·V')
};

/// Scaled dot-product attention at the resolution of its inputs:
/// A = softmax(Q'K'ᵀ/√C_a), O' = A·V', features = ReLU(conv_out(O')).
template <typename T>
AttentionOutput<T> attention_core(const Tensor<T>& mask_small, const Tensor<T>& depth_small,
                                  const AttentionParams<T>& params);

/// Downsamples to the working grid, attends, and upsamples the result back
/// (bilinear) to the input extents; `features` is then F_att (B×C_d×H×W).
template <typename T>
AttentionOutput<T> cross_attention(const Tensor<T>& m_seg, const Tensor<T>& f_depth, const AttentionParams<T>& params);

struct FusionConfig {
  std::size_t depth_channels = 8;
  std::size_t out_channels = 128;  // C_f
};

template <typename T>
struct FusionParams {
  FusionConfig config;
  ConvBn<T> fuse;  // 1×1, 2·C_d → C_f

  static FusionParams make(const FusionConfig& config, Rng& rng);
  void visit_params(const std::string& prefix, const ParamVisitor<T>& f) { fuse.visit_params(prefix + ".conv", f); }
  void visit_buffers(const std::string& prefix, const ParamVisitor<T>& f) { fuse.visit_buffers(prefix + ".conv", f); }
};

// ReLU(BN(conv1×1(concat(f_att, f_depth)))).
template <typename T>
Tensor<T> fuse_features(const Tensor<T>& f_att, const Tensor<T>& f_depth, FusionParams<T>& params, NormMode mode);

}  // namespace iadc
