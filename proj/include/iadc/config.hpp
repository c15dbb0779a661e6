#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>

#include "iadc/loss.hpp"
#include "iadc/masks.hpp"
#include "iadc/model.hpp"

namespace iadc {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

enum class DepthUnits { meters, centimeters };

/// Every tunable of a training run. Defaults reproduce the published
/// parameter table; `steps` > 0 replaces the epoch budget.
struct RunConfig {
  std::size_t height = 256;
  std::size_t width = 512;
  std::size_t batch_size = 4;
  double learning_rate = 1e-4;
  std::size_t epochs = 100;
  std::size_t steps = 0;
  std::uint64_t seed = 0;
  double keep_prob = 0.05;
  bool resample_sparsity = false;

  ModelConfig model;
  LossWeights loss_weights;
  LossKind loss = LossKind::l1;

  MaskSource mask_source = MaskSource::ground_truth;
  std::string mask_pattern;
  InterpMode mask_resize = InterpMode::nearest;

  std::size_t log_every = 50;
  DepthUnits units = DepthUnits::meters;
  bool val_on_train = false;

  /// Throws ConfigError describing the first invalid value.
  void validate() const;

  std::string to_text() const;
  // Unknown or repeated keys and malformed values are errors; `origin`
  // prefixes messages (typically the file name).
  static RunConfig from_text(const std::string& text, const std::string& origin = "config");
  static RunConfig load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;

  /// Applies a named preset on top of the current values ("desk").
  void apply_preset(const std::string& name);

  bool operator==(const RunConfig&) const;
};

double units_per_meter(DepthUnits units);
const char* units_name(DepthUnits units);

}  // namespace iadc
