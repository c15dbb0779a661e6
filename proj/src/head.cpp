#include "iadc/head.hpp"

namespace iadc {

void HeadConfig::validate() const {
  if (in_channels == 0 || mid_channels == 0) throw std::invalid_argument("head channel counts must be positive");
  if (reduction == 0 || in_channels % reduction != 0)
    throw std::invalid_argument("fusion channels (" + std::to_string(in_channels) +
                                ") must be divisible by the SE reduction ratio (" + std::to_string(reduction) + ")");
  if (!(depth_scale > 0.0)) throw std::invalid_argument("depth_scale must be positive");
}

template <typename T>
HeadParams<T> HeadParams<T>::make(const HeadConfig& config, Rng& rng) {
  config.validate();
  const std::size_t c = config.in_channels, b = config.bottleneck(), mid = config.mid_channels;
  HeadParams p;
  p.config = config;
  p.w1 = kaiming_uniform<T>({b, c}, c, rng);
  p.w2 = kaiming_uniform<T>({c, b}, b, rng);
  p.conv1 = ConvBn<T>::make(c, mid, 3, rng);
  p.conv2_weight = kaiming_uniform<T>({1, mid, 3, 3}, mid * 9, rng);
  p.conv2_bias = Tensor<T>({1}, T(0));
  p.visit_params("", [](const std::string&, Tensor<T>& t) { t.set_requires_grad(); });
  return p;
}

template <typename T>
void HeadParams<T>::visit_params(const std::string& prefix, const ParamVisitor<T>& f) {
  f(prefix + ".se.w1", w1);
  f(prefix + ".se.w2", w2);
  conv1.visit_params(prefix + ".conv1", f);
  f(prefix + ".conv2.weight", conv2_weight);
  f(prefix + ".conv2.bias", conv2_bias);
}

template <typename T>
ChannelAttention<T> channel_attention(const Tensor<T>& f_fused, const HeadParams<T>& params) {
  const std::size_t c = params.config.in_channels;
  if (f_fused.rank() != 4 || f_fused.dim(1) != c)
    throw ShapeError("channel_attention expects B×" + std::to_string(c) + "×H×W, got " +
                     shape_to_string(f_fused.shape()));
  const std::size_t b = f_fused.dim(0);
  Tensor<T> z = global_avg_pool(f_fused);                                        // B×C
  Tensor<T> hidden = relu(matmul(z, transpose(params.w1)));                      // B×C/r
  Tensor<T> s = sigmoid(matmul(hidden, transpose(params.w2)));                   // B×C
  Tensor<T> out = mul(f_fused, reshape(s, {b, c, 1, 1}));
  return {out, s};
}

template <typename T>
Tensor<T> head_forward(const Tensor<T>& f_fused, HeadParams<T>& params, NormMode mode) {
  Tensor<T> gated = channel_attention(f_fused, params).output;
  Tensor<T> mid = relu(params.conv1.forward(gated, mode));
  Tensor<T> d_norm = conv2d(mid, params.conv2_weight, params.conv2_bias, 1, 1);
  return scale(d_norm, static_cast<T>(params.config.depth_scale));
}

template struct HeadParams<float>;
template struct HeadParams<double>;
template ChannelAttention<float> channel_attention(const Tensor<float>&, const HeadParams<float>&);
template ChannelAttention<double> channel_attention(const Tensor<double>&, const HeadParams<double>&);
template Tensor<float> head_forward(const Tensor<float>&, HeadParams<float>&, NormMode);
template Tensor<double> head_forward(const Tensor<double>&, HeadParams<double>&, NormMode);

}  // namespace iadc
