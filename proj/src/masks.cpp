#include "iadc/masks.hpp"

#include <algorithm>
#include <cstdio>

namespace iadc {

Tensor<float> merge_masks(const std::vector<Tensor<float>>& instances, std::size_t height, std::size_t width) {
  std::vector<float> merged(height * width, 0.0f);
  for (std::size_t i = 0; i < instances.size(); ++i) {
    const auto& m = instances[i];
    if (m.size() != height * width || m.dim(m.rank() - 1) != width || m.dim(m.rank() - 2) != height)
      throw ShapeError("merge_masks: mask " + std::to_string(i) + " has shape " + shape_to_string(m.shape()) +
                       ", expected (1," + std::to_string(height) + "," + std::to_string(width) + ")");
    const auto v = m.data();
    for (std::size_t p = 0; p < merged.size(); ++p) merged[p] = std::max(merged[p], v[p]);
  }
  return Tensor<float>({1, height, width}, std::move(merged));
}

Tensor<float> resize_mask(const Tensor<float>& merged, std::size_t out_h, std::size_t out_w, InterpMode mode) {
  Tensor<float> batched = merged;
  if (merged.rank() == 3) {
    if (merged.dim(0) != 1) throw ShapeError("resize_mask expects a single-channel mask, got " + shape_to_string(merged.shape()));
    batched = Tensor<float>({1, 1, merged.dim(1), merged.dim(2)},
                            std::vector<float>(merged.data().begin(), merged.data().end()));
  } else if (merged.rank() != 4 || merged.dim(1) != 1) {
    throw ShapeError("resize_mask expects 1×H×W or B×1×H×W, got " + shape_to_string(merged.shape()));
  }
  return interpolate(batched, out_h, out_w, mode);
}

std::string expand_mask_pattern(const std::string& pattern, const std::string& scene, std::size_t index) {
  char idx[16];
  std::snprintf(idx, sizeof(idx), "%03zu", index);
  std::string out;
  for (std::size_t i = 0; i < pattern.size();) {
    if (pattern.compare(i, 7, "{scene}") == 0) {
      out += scene;
      i += 7;
    } else if (pattern.compare(i, 7, "{index}") == 0) {
      out += idx;
      i += 7;
    } else {
      out += pattern[i++];
    }
  }
  return out;
}

MaskProvider::MaskProvider(MaskSource source, std::string pattern, std::filesystem::path root)
    : source_(source), pattern_(std::move(pattern)), root_(std::move(root)) {
  if (source_ == MaskSource::file && pattern_.find("{index}") == std::string::npos)
    throw std::invalid_argument("mask file pattern must contain {index}: '" + pattern_ + "'");
}

std::vector<Tensor<float>> MaskProvider::instances(const Sample& sample) const {
  if (source_ == MaskSource::ground_truth) return sample.instances;
  std::vector<Tensor<float>> out;
  for (std::size_t i = 0;; ++i) {
    const auto path = root_ / expand_mask_pattern(pattern_, sample.scene_id, i);
    if (!std::filesystem::exists(path)) break;
    Tensor<float> m = read_mask_pgm(path);
    if (m.dim(1) != sample.height() || m.dim(2) != sample.width())
      throw FormatError(path.string() + ": field 'width'/'height' does not match the sample");
    out.push_back(std::move(m));
  }
  return out;
}

}  // namespace iadc
