#pragma once

#include <array>
#include <cstdint>
#include <string_view>

#include "iadc/pnm.hpp"
#include "iadc/tensor.hpp"

namespace iadc::cli {

inline constexpr double kColormapMaxDepth = 80.0;  // meters mapped to the last entry

using Rgb = std::array<std::uint8_t, 3>;

/// 256-entry lookup table mapping [0, 80 m] linearly onto its rows.
class DepthColormap {
 public:
  // Parses "R G B" lines; '#' starts a comment. Exactly 256 entries.
  static DepthColormap parse(std::string_view text);
  static const DepthColormap& builtin();

  // Entry for a depth in meters; depths at or below zero have no color.
  Rgb color(double meters) const;
  const std::array<Rgb, 256>& table() const { return table_; }

 private:
  std::array<Rgb, 256> table_{};
};

// Colorized 8-bit P6 image of a single-channel depth map; no-depth pixels are black.
PnmImage colorize_depth(const Tensor<float>& depth_m, const DepthColormap& cmap);

// RGB in [0,1] (3×H×W or 1×3×H×W) to an 8-bit P6 image.
PnmImage rgb_image(const Tensor<float>& rgb);

// Mask in [0,1] to a gray P6 image (white = object).
PnmImage mask_image(const Tensor<float>& mask);

}  // namespace iadc::cli
