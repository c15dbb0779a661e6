#include "iadc/attention.hpp"

#include <cmath>

namespace iadc {

void AttentionConfig::validate() const {
  if (depth_channels == 0 || embed_dim == 0) throw std::invalid_argument("attention channel counts must be positive");
  if (work_h == 0 || work_w == 0) throw std::invalid_argument("attention working resolution must be positive");
}

template <typename T>
AttentionParams<T> AttentionParams<T>::make(const AttentionConfig& config, Rng& rng) {
  config.validate();
  const std::size_t cd = config.depth_channels, ca = config.embed_dim;
  AttentionParams p;
  p.config = config;
  p.wq = kaiming_uniform<T>({ca, 1, 1, 1}, 1, rng);
  p.bq = Tensor<T>({ca}, T(0));
  p.wk = kaiming_uniform<T>({ca, cd, 1, 1}, cd, rng);
  p.wv = kaiming_uniform<T>({ca, cd, 1, 1}, cd, rng);
  p.wout = kaiming_uniform<T>({cd, ca, 1, 1}, ca, rng);
  p.visit_params("", [](const std::string&, Tensor<T>& t) { t.set_requires_grad(); });
  return p;
}

template <typename T>
void AttentionParams<T>::visit_params(const std::string& prefix, const ParamVisitor<T>& f) {
  f(prefix + ".q.weight", wq);
  f(prefix + ".q.bias", bq);
  f(prefix + ".k.weight", wk);
  f(prefix + ".v.weight", wv);
  f(prefix + ".out.weight", wout);
}

template <typename T>
AttentionOutput<T> attention_core(const Tensor<T>& mask_small, const Tensor<T>& depth_small,
                                  const AttentionParams<T>& params) {
  const auto& cfg = params.config;
  if (mask_small.rank() != 4 || mask_small.dim(1) != 1)
    throw ShapeError("attention query must be B×1×h×w, got " + shape_to_string(mask_small.shape()));
  if (depth_small.rank() != 4 || depth_small.dim(1) != cfg.depth_channels || depth_small.dim(0) != mask_small.dim(0) ||
      depth_small.dim(2) != mask_small.dim(2) || depth_small.dim(3) != mask_small.dim(3))
    throw ShapeError("attention key/value must be B×" + std::to_string(cfg.depth_channels) + "×h×w matching the query, got " +
                     shape_to_string(depth_small.shape()));
  const std::size_t b = mask_small.dim(0), h = mask_small.dim(2), w = mask_small.dim(3);
  const std::size_t n = h * w, ca = cfg.embed_dim;

  Tensor<T> q = conv2d(mask_small, params.wq, params.bq, 1, 0);
  Tensor<T> k = conv2d(depth_small, params.wk, std::nullopt, 1, 0);
  Tensor<T> v = conv2d(depth_small, params.wv, std::nullopt, 1, 0);

  // Channel-major B×C_a×N views; Q' and V' are their transposes.
  Tensor<T> q_rows = transpose(reshape(q, {b, ca, n}));  // B×N×C_a
  Tensor<T> k_cols = reshape(k, {b, ca, n});             // B×C_a×N = K'ᵀ
  Tensor<T> v_rows = transpose(reshape(v, {b, ca, n}));  // B×N×C_a
  Tensor<T> scores = scale(matmul(q_rows, k_cols), static_cast<T>(1.0 / std::sqrt(static_cast<double>(ca))));
  Tensor<T> attn = softmax_rows(scores);
  Tensor<T> attended = matmul(attn, v_rows);  // B×N×C_a
  Tensor<T> spatial = reshape(transpose(attended), {b, ca, h, w});
  Tensor<T> features = relu(conv2d(spatial, params.wout, std::nullopt, 1, 0));
  return {features, attn, v_rows, attended};
}

template <typename T>
AttentionOutput<T> cross_attention(const Tensor<T>& m_seg, const Tensor<T>& f_depth, const AttentionParams<T>& params) {
  const auto& cfg = params.config;
  if (m_seg.rank() != 4 || f_depth.rank() != 4 || m_seg.dim(0) != f_depth.dim(0) || m_seg.dim(2) != f_depth.dim(2) ||
      m_seg.dim(3) != f_depth.dim(3))
    throw ShapeError("cross_attention: mask " + shape_to_string(m_seg.shape()) + " and depth features " +
                     shape_to_string(f_depth.shape()) + " must share batch and spatial extents");
  const std::size_t h = f_depth.dim(2), w = f_depth.dim(3);
  Tensor<T> mask_small = interpolate(m_seg, cfg.work_h, cfg.work_w, cfg.mask_downsample);
  Tensor<T> depth_small = interpolate(f_depth, cfg.work_h, cfg.work_w, InterpMode::bilinear);
  AttentionOutput<T> out = attention_core(mask_small, depth_small, params);
  out.features = interpolate(out.features, h, w, InterpMode::bilinear);
  return out;
}

template <typename T>
FusionParams<T> FusionParams<T>::make(const FusionConfig& config, Rng& rng) {
  if (config.depth_channels == 0 || config.out_channels == 0)
    throw std::invalid_argument("fusion channel counts must be positive");
  FusionParams p;
  p.config = config;
  p.fuse = ConvBn<T>::make(2 * config.depth_channels, config.out_channels, 1, rng);
  return p;
}

template <typename T>
Tensor<T> fuse_features(const Tensor<T>& f_att, const Tensor<T>& f_depth, FusionParams<T>& params, NormMode mode) {
  if (f_att.shape() != f_depth.shape())
    throw ShapeError("fuse_features: F_att " + shape_to_string(f_att.shape()) + " and F_depth " +
                     shape_to_string(f_depth.shape()) + " differ");
  return relu(params.fuse.forward(concat_channels(f_att, f_depth), mode));
}

template struct AttentionParams<float>;
template struct AttentionParams<double>;
template struct FusionParams<float>;
template struct FusionParams<double>;
template AttentionOutput<float> attention_core(const Tensor<float>&, const Tensor<float>&, const AttentionParams<float>&);
template AttentionOutput<double> attention_core(const Tensor<double>&, const Tensor<double>&, const AttentionParams<double>&);
template AttentionOutput<float> cross_attention(const Tensor<float>&, const Tensor<float>&, const AttentionParams<float>&);
template AttentionOutput<double> cross_attention(const Tensor<double>&, const Tensor<double>&, const AttentionParams<double>&);
template Tensor<float> fuse_features(const Tensor<float>&, const Tensor<float>&, FusionParams<float>&, NormMode);
template Tensor<double> fuse_features(const Tensor<double>&, const Tensor<double>&, FusionParams<double>&, NormMode);

}  // namespace iadc
