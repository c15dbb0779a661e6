#include "colormap.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <string>

#include "embedded_colormap.hpp"

namespace iadc::cli {

namespace {

std::pair<std::size_t, std::size_t> plane(const Tensor<float>& t, std::size_t channels) {
  const std::size_t r = t.rank();
  if (r < 2) throw ShapeError("image tensor needs at least 2 axes, got " + shape_to_string(t.shape()));
  const std::size_t h = t.dim(r - 2), w = t.dim(r - 1);
  if (t.size() != channels * h * w)
    throw ShapeError("expected a " + std::to_string(channels) + "-channel image, got " + shape_to_string(t.shape()));
  return {h, w};
}

std::uint16_t to_byte(float v) {
  return static_cast<std::uint16_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
}

}  // namespace

DepthColormap DepthColormap::parse(std::string_view text) {
  DepthColormap cmap;
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t count = 0;
  for (std::size_t lineno = 1; std::getline(in, line); ++lineno) {
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    std::istringstream ls(line);
    int r, g, b;
    if (!(ls >> r)) continue;
    std::string extra;
    if (!(ls >> g >> b) || (ls >> extra) || r < 0 || g < 0 || b < 0 || r > 255 || g > 255 || b > 255)
      throw FormatError("colormap line " + std::to_string(lineno) + ": expected three values in 0..255");
    if (count == cmap.table_.size()) throw FormatError("colormap has more than 256 entries");
    cmap.table_[count++] = {static_cast<std::uint8_t>(r), static_cast<std::uint8_t>(g), static_cast<std::uint8_t>(b)};
  }
  if (count != cmap.table_.size())
    throw FormatError("colormap has " + std::to_string(count) + " entries, expected 256");
  return cmap;
}

const DepthColormap& DepthColormap::builtin() {
  static const DepthColormap cmap = parse(kEmbeddedDepthColormap);
  return cmap;
}

Rgb DepthColormap::color(double meters) const {
  const double t = std::clamp(meters / kColormapMaxDepth, 0.0, 1.0);
  return table_[static_cast<std::size_t>(std::lround(t * 255.0))];
}

PnmImage colorize_depth(const Tensor<float>& depth_m, const DepthColormap& cmap) {
  const auto [h, w] = plane(depth_m, 1);
  PnmImage img{w, h, 3, 255, {}};
  img.samples.reserve(3 * h * w);
  for (float d : depth_m.data()) {
    const Rgb c = d > 0.0f ? cmap.color(d) : Rgb{0, 0, 0};
    img.samples.insert(img.samples.end(), c.begin(), c.end());
  }
  return img;
}

PnmImage rgb_image(const Tensor<float>& rgb) {
  const auto [h, w] = plane(rgb, 3);
  PnmImage img{w, h, 3, 255, {}};
  img.samples.resize(3 * h * w);
  const auto v = rgb.data();
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t i = 0; i < h * w; ++i) img.samples[3 * i + c] = to_byte(v[c * h * w + i]);
  return img;
}

PnmImage mask_image(const Tensor<float>& mask) {
  const auto [h, w] = plane(mask, 1);
  PnmImage img{w, h, 3, 255, {}};
  img.samples.reserve(3 * h * w);
  for (float m : mask.data()) img.samples.insert(img.samples.end(), 3, to_byte(m));
  return img;
}

}  // namespace iadc::cli
