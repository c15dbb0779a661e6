#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "iadc/pnm.hpp"
#include "iadc/tensor.hpp"

namespace iadc {

/// One scene: RGB in [0,1] (3×H×W), depth in meters (1×H×W, 0 = no return),
/// and one binary 1×H×W mask per visible object.
struct Sample {
  Tensor<float> rgb;
  Tensor<float> depth_gt;
  std::vector<Tensor<float>> instances;
  std::string scene_id;
  std::string condition;

  std::size_t height() const { return depth_gt.dim(1); }
  std::size_t width() const { return depth_gt.dim(2); }
};

/// Sparse depth (meters, 0 where unobserved) and its {0,1} validity map.
struct SparseInput {
  Tensor<float> depth_sparse;
  Tensor<float> validity;
};

inline constexpr std::size_t kMaxObjects = 32;
inline constexpr std::size_t kMinSceneExtent = 32;

/// Deterministic procedural scene: sky (no depth) above a ground plane whose
/// depth grows toward the horizon, plus up to `n_objects` rectangles and
/// ellipses standing on the ground. Nearer objects own contested pixels.
/// Objects that cannot be placed visibly after bounded retries are dropped.
Sample generate_scene(std::uint64_t seed, std::size_t height, std::size_t width, std::size_t n_objects);

/// Keeps each pixel with depth_gt > 0 independently with probability keep_prob.
SparseInput sparsify(const Sample& sample, double keep_prob, std::uint64_t seed);

// Centimetre quantization used by the 16-bit depth files.
std::uint16_t depth_to_centimeters(double meters);

/// Writes rgb.ppm, depth.pgm, inst_NNN.pgm and manifest.txt into `dir`.
void write_sample(const Sample& sample, const std::filesystem::path& dir);
Sample read_sample(const std::filesystem::path& dir);

// Binary masks stored as 8-bit 0/255 (or maxval-1 0/1) PGM.
Tensor<float> read_mask_pgm(const std::filesystem::path& path);
void write_mask_pgm(const std::filesystem::path& path, const Tensor<float>& mask);

void write_depth_pgm(const std::filesystem::path& path, const Tensor<float>& depth_m);
Tensor<float> read_depth_pgm(const std::filesystem::path& path);

}  // namespace iadc
