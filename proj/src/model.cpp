#include "iadc/model.hpp"

namespace iadc {

UNetConfig ModelConfig::unet() const {
  UNetConfig c;
  c.enc_channels = enc_channels;
  c.depth_scale = depth_scale;
  return c;
}

AttentionConfig ModelConfig::attention() const {
  AttentionConfig c;
  c.depth_channels = enc_channels.empty() ? 0 : enc_channels.front();
  c.embed_dim = attn_dim;
  c.work_h = attn_height;
  c.work_w = attn_width;
  c.mask_downsample = attn_mask_downsample;
  return c;
}

FusionConfig ModelConfig::fusion() const {
  return FusionConfig{enc_channels.empty() ? 0 : enc_channels.front(), fusion_channels};
}

HeadConfig ModelConfig::head() const {
  HeadConfig c;
  c.in_channels = fusion_channels;
  c.reduction = se_reduction;
  c.mid_channels = head_mid_channels;
  c.depth_scale = depth_scale;
  return c;
}

void ModelConfig::validate() const {
  unet().validate();
  attention().validate();
  if (fusion_channels == 0) throw std::invalid_argument("fusion_channels must be positive");
  head().validate();
}

template <typename T>
Model<T>::Model(const ModelConfig& config, std::uint64_t seed) : config_(config) {
  config_.validate();
  // Independent streams per component keep each block's initialization
  // stable when another block's shape changes.
  Rng unet_rng(mix_seed(seed, 1)), attn_rng(mix_seed(seed, 2)), fusion_rng(mix_seed(seed, 3)),
      head_rng(mix_seed(seed, 4));
  unet_ = UNetParams<T>::make(config_.unet(), unet_rng);
  attention_ = AttentionParams<T>::make(config_.attention(), attn_rng);
  fusion_ = FusionParams<T>::make(config_.fusion(), fusion_rng);
  head_ = HeadParams<T>::make(config_.head(), head_rng);
}

template <typename T>
ModelOutput<T> Model<T>::forward(const ModelInput<T>& input, NormMode mode) {
  ModelOutput<T> out;
  Tensor<T> x = stack_input(input.rgb, input.depth_sparse, input.validity, config_.depth_scale);
  UNetOutput<T> u = unet_forward(x, unet_, mode);
  out.f_depth = u.f_depth;
  out.d_init = u.d_init;
  if (config_.attention_enabled) {
    AttentionOutput<T> a = cross_attention(input.m_seg, u.f_depth, attention_);
    out.f_att = a.features;
    out.attention = a.attention;
  } else {
    out.f_att = Tensor<T>(u.f_depth.shape(), T(0));
  }
  out.f_fused = fuse_features(out.f_att, out.f_depth, fusion_, mode);
  out.d_final = head_forward(out.f_fused, head_, mode);
  return out;
}

template <typename T>
void Model<T>::visit_params(const ParamVisitor<T>& f) {
  unet_.visit_params("unet", f);
  attention_.visit_params("attn", f);
  fusion_.visit_params("fusion", f);
  head_.visit_params("head", f);
}

template <typename T>
void Model<T>::visit_buffers(const ParamVisitor<T>& f) {
  unet_.visit_buffers("unet", f);
  fusion_.visit_buffers("fusion", f);
  head_.visit_buffers("head", f);
}

template <typename T>
std::vector<std::pair<std::string, Tensor<T>>> Model<T>::named_params() {
  std::vector<std::pair<std::string, Tensor<T>>> out;
  visit_params([&](const std::string& name, Tensor<T>& t) { out.emplace_back(name, t); });
  return out;
}

template <typename T>
std::size_t Model<T>::parameter_count() {
  std::size_t n = 0;
  visit_params([&](const std::string&, Tensor<T>& t) { n += t.size(); });
  return n;
}

template class Model<float>;
template class Model<double>;

}  // namespace iadc
