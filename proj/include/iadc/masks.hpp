#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "iadc/ops.hpp"
#include "iadc/scene.hpp"

namespace iadc {

/// Pixelwise maximum over binary 1×H×W masks; an empty list gives zeros.
Tensor<float> merge_masks(const std::vector<Tensor<float>>& instances, std::size_t height, std::size_t width);

/// Resizes a 1×H×W (or B×1×H×W) mask to 1×1×H'×W' (B×1×H'×W').
Tensor<float> resize_mask(const Tensor<float>& merged, std::size_t out_h, std::size_t out_w,
                          InterpMode mode = InterpMode::nearest);

enum class MaskSource { ground_truth, file };

/// Non-trainable source of per-instance masks.
///
/// `ground_truth` returns the sample's own instances. `file` reads externally
/// produced masks (any detector's export) from `pattern` relative to `root`;
/// `{scene}` expands to the scene id and `{index}` to a 3-digit instance index.
/// Indices are read from 000 upward until the first missing file.
class MaskProvider {
 public:
  MaskProvider() = default;
  MaskProvider(MaskSource source, std::string pattern = {}, std::filesystem::path root = {});

  MaskSource source() const { return source_; }
  std::vector<Tensor<float>> instances(const Sample& sample) const;

 private:
  MaskSource source_ = MaskSource::ground_truth;
  std::string pattern_;
  std::filesystem::path root_;
};

std::string expand_mask_pattern(const std::string& pattern, const std::string& scene, std::size_t index);

}  // namespace iadc
