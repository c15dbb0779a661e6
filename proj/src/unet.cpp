#include "iadc/unet.hpp"

namespace iadc {

void UNetConfig::validate() const {
  if (enc_channels.size() != kLevels)
    throw std::invalid_argument("U-Net needs exactly 5 encoder channel widths, got " +
                                std::to_string(enc_channels.size()));
  for (auto c : enc_channels)
    if (c == 0) throw std::invalid_argument("U-Net channel widths must be positive");
  if (in_channels != 5) throw std::invalid_argument("U-Net input is fixed at 5 channels (RGB, depth, validity)");
  if (kernel != 3) throw std::invalid_argument("U-Net block kernel must be 3");
  if (!(depth_scale > 0.0)) throw std::invalid_argument("depth_scale must be positive");
}

template <typename T>
UNetParams<T> UNetParams<T>::make(const UNetConfig& config, Rng& rng) {
  config.validate();
  UNetParams p;
  p.config = config;
  const auto& c = config.enc_channels;
  std::size_t prev = config.in_channels;
  for (std::size_t l = 0; l < UNetConfig::kLevels; ++l) {
    EncoderLevel level{ConvBn<T>::make(prev, c[l], config.kernel, rng), ConvBn<T>::make(c[l], c[l], config.kernel, rng)};
    p.encoder.push_back(std::move(level));
    prev = c[l];
  }
  p.decoder.resize(UNetConfig::kLevels - 1);
  for (std::size_t l = UNetConfig::kLevels - 1; l-- > 0;) {
    auto& stage = p.decoder[l];
    stage.up = kaiming_uniform<T>({c[l + 1], c[l], 2, 2}, c[l] * 4, rng);
    stage.merge = ConvBn<T>::make(2 * c[l], c[l], config.kernel, rng);
  }
  p.head_weight = kaiming_uniform<T>({1, c[0], 1, 1}, c[0], rng);
  p.head_bias = Tensor<T>({1}, T(0));
  p.visit_params("", [](const std::string&, Tensor<T>& t) { t.set_requires_grad(); });
  return p;
}

template <typename T>
void UNetParams<T>::visit_params(const std::string& prefix, const ParamVisitor<T>& f) {
  for (std::size_t l = 0; l < encoder.size(); ++l) {
    const std::string base = prefix + ".enc" + std::to_string(l);
    encoder[l].first.visit_params(base + ".conv1", f);
    encoder[l].second.visit_params(base + ".conv2", f);
  }
  for (std::size_t l = decoder.size(); l-- > 0;) {
    const std::string base = prefix + ".dec" + std::to_string(l);
    f(base + ".up.weight", decoder[l].up);
    decoder[l].merge.visit_params(base + ".conv", f);
  }
  f(prefix + ".out.weight", head_weight);
  f(prefix + ".out.bias", head_bias);
}

template <typename T>
void UNetParams<T>::visit_buffers(const std::string& prefix, const ParamVisitor<T>& f) {
  for (std::size_t l = 0; l < encoder.size(); ++l) {
    const std::string base = prefix + ".enc" + std::to_string(l);
    encoder[l].first.visit_buffers(base + ".conv1", f);
    encoder[l].second.visit_buffers(base + ".conv2", f);
  }
  for (std::size_t l = decoder.size(); l-- > 0;)
    decoder[l].merge.visit_buffers(prefix + ".dec" + std::to_string(l) + ".conv", f);
}

template <typename T>
Tensor<T> stack_input(const Tensor<T>& rgb, const Tensor<T>& depth_sparse, const Tensor<T>& validity,
                      double depth_scale) {
  if (rgb.rank() != 4 || rgb.dim(1) != 3)
    throw ShapeError("stack_input: rgb must be B×3×H×W, got " + shape_to_string(rgb.shape()));
  for (const auto* t : {&depth_sparse, &validity})
    if (t->rank() != 4 || t->dim(1) != 1 || t->dim(0) != rgb.dim(0) || t->dim(2) != rgb.dim(2) ||
        t->dim(3) != rgb.dim(3))
      throw ShapeError("stack_input: expected B×1×" + std::to_string(rgb.dim(2)) + "×" + std::to_string(rgb.dim(3)) +
                       ", got " + shape_to_string(t->shape()));
  return concat_channels(concat_channels(rgb, scale(depth_sparse, static_cast<T>(1.0 / depth_scale))), validity);
}

template <typename T>
UNetOutput<T> unet_forward(const Tensor<T>& x, UNetParams<T>& params, NormMode mode) {
  const auto& cfg = params.config;
  if (x.rank() != 4 || x.dim(1) != cfg.in_channels)
    throw ShapeError("unet_forward expects B×5×H×W, got " + shape_to_string(x.shape()));
  if (x.dim(2) % UNetConfig::divisor() != 0 || x.dim(3) % UNetConfig::divisor() != 0)
    throw ShapeError("unet_forward: height and width must be divisible by 16, got " + std::to_string(x.dim(2)) + "×" +
                     std::to_string(x.dim(3)));

  std::vector<Tensor<T>> skips;
  Tensor<T> h = x;
  for (std::size_t l = 0; l < UNetConfig::kLevels; ++l) {
    if (l > 0) h = maxpool2(h);
    h = relu(params.encoder[l].first.forward(h, mode));
    h = relu(params.encoder[l].second.forward(h, mode));
    skips.push_back(h);
  }
  for (std::size_t l = UNetConfig::kLevels - 1; l-- > 0;) {
    auto& stage = params.decoder[l];
    Tensor<T> up = conv_transpose2d(h, stage.up, 2);
    h = relu(stage.merge.forward(concat_channels(up, skips[l]), mode));
  }
  Tensor<T> d_norm = conv2d(h, params.head_weight, params.head_bias, 1, 0);
  return {h, scale(d_norm, static_cast<T>(cfg.depth_scale))};
}

std::size_t unet_parameter_count(const UNetConfig& config) {
  config.validate();
  const auto& c = config.enc_channels;
  const std::size_t k2 = config.kernel * config.kernel;
  std::size_t n = 0;
  std::size_t prev = config.in_channels;
  for (std::size_t l = 0; l < UNetConfig::kLevels; ++l) {
    n += k2 * prev * c[l] + 2 * c[l];  // conv1 + bn1
    n += k2 * c[l] * c[l] + 2 * c[l];  // conv2 + bn2
    prev = c[l];
  }
  for (std::size_t l = 0; l + 1 < UNetConfig::kLevels; ++l) {
    n += 4 * c[l + 1] * c[l];              // transposed conv
    n += k2 * 2 * c[l] * c[l] + 2 * c[l];  // merge conv + bn
  }
  return n + c[0] + 1;
}

template struct UNetParams<float>;
template struct UNetParams<double>;
template Tensor<float> stack_input(const Tensor<float>&, const Tensor<float>&, const Tensor<float>&, double);
template Tensor<double> stack_input(const Tensor<double>&, const Tensor<double>&, const Tensor<double>&, double);
template UNetOutput<float> unet_forward(const Tensor<float>&, UNetParams<float>&, NormMode);
template UNetOutput<double> unet_forward(const Tensor<double>&, UNetParams<double>&, NormMode);

}  // namespace iadc
