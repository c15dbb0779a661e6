#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "iadc/model.hpp"

namespace iadc {

inline constexpr double kOpGradTolerance = 1e-5;
inline constexpr double kPipelineGradTolerance = 1e-3;

struct OpGradReport {
  std::string op;
  std::vector<std::string> shapes;  // one entry per checked input shape
  double max_rel_error = 0.0;
  bool passed() const { return max_rel_error < kOpGradTolerance && shapes.size() >= 3; }
};

/// Central-difference audit of every differentiable tensor op in double
/// precision (step 1e-6), each on three input shapes. One report per op.
std::vector<OpGradReport> check_op_gradients(std::uint64_t seed = 7);

struct PipelineGradReport {
  double max_rel_error = 0.0;
  std::string worst_param;
  std::size_t coordinates = 0;
  std::size_t tensors = 0;
  bool passed() const { return max_rel_error < kPipelineGradTolerance && coordinates >= 100; }
};

// The 16×32 micro network used for end-to-end gradient audits.
ModelConfig micro_model_config();

/// Full forward (U-Net, attention, fusion, head, loss) of the micro network
/// on random batch-2 data; compares the taped gradient with central
/// differences on `coordinates` parameter entries (each tensor sampled at
/// least once).
PipelineGradReport check_pipeline_gradient(std::uint64_t seed = 11, std::size_t coordinates = 160);

}  // namespace iadc
