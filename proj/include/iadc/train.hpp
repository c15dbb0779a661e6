#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "iadc/adam.hpp"
#include "iadc/checkpoint.hpp"
#include "iadc/config.hpp"

namespace iadc {

/// Samples grouped by the split file of a generated dataset directory.
struct Dataset {
  std::vector<Sample> train;
  std::vector<Sample> val;
  std::vector<std::string> train_names;
  std::vector<std::string> val_names;
};

// Reads `split.txt` (lines "train NAME" / "val NAME") and each named sample.
Dataset load_dataset(const std::filesystem::path& dir);

template <typename T>
struct Batch {
  ModelInput<T> input;
  Tensor<T> gt;             // B×1×H×W, meters
  Tensor<T> gt_foreground;  // B×1×H×W merged ground-truth instances
};

/// Stacks samples into a batch. M_seg comes from `masks` and is resized to
/// the sample resolution with `mask_resize`.
template <typename T>
Batch<T> assemble_batch(const std::vector<const Sample*>& samples, const std::vector<SparseInput>& sparse,
                        const MaskProvider& masks, InterpMode mask_resize);

struct HistoryRow {
  std::uint64_t step = 0;
  double loss = 0.0;
  double val_mae = 0.0;
  double val_rmse = 0.0;
  double val_init_mae = 0.0;
};

std::string history_csv_header();
std::string history_csv_row(const HistoryRow& row);

struct ValidationSummary {
  Metrics final_depth;
  Metrics init_depth;
};

/// Owns the model, optimizer and data order of one run. Data order and
/// sparsity are pure functions of (seed, step), so a resumed run replays
/// exactly what an uninterrupted one would have done.
class Trainer {
 public:
  Trainer(RunConfig config, std::vector<Sample> train, std::vector<Sample> val, MaskProvider masks = {});

  const RunConfig& config() const { return config_; }
  Model<float>& model() { return model_; }
  std::uint64_t step() const { return step_; }
  std::uint64_t total_steps() const;

  // One optimization step; returns the loss before the update.
  LossTerms<float> train_step();

  // Eval-mode metrics over the validation split (or the training split when
  // val_on_train is set or no validation samples exist).
  ValidationSummary validate();

  /// Runs until total_steps(), calling `on_log` for logged rows (the first
  /// step, every log_every steps and the last step).
  std::vector<HistoryRow> run(const std::function<void(const HistoryRow&)>& on_log = {});

  Checkpoint checkpoint();
  void restore(const Checkpoint& ckpt);

 private:
  SparseInput sparse_for(std::size_t index, bool training) const;
  std::vector<std::size_t> batch_indices(std::uint64_t step) const;

  RunConfig config_;
  std::vector<Sample> train_;
  std::vector<Sample> val_;
  MaskProvider masks_;
  Model<float> model_;
  Adam<float> adam_;
  std::uint64_t step_ = 0;
};

/// Model and config restored from a checkpoint (optimizer state ignored).
struct LoadedModel {
  RunConfig config;
  Model<float> model;
  std::uint64_t step = 0;
};

LoadedModel load_model(const std::filesystem::path& checkpoint_path);
void restore_model(const Checkpoint& ckpt, Model<float>& model);

struct InferenceResult {
  Tensor<float> d_init;   // 1×1×H×W, meters
  Tensor<float> d_final;  // 1×1×H×W, meters
  Tensor<float> m_seg;    // 1×1×H×W
  SparseInput sparse;
  Metrics metrics;        // of d_final, meters
  Metrics init_metrics;   // of d_init, meters
};

/// Eval-mode forward of one sample with reproducible sparsification.
InferenceResult infer(Model<float>& model, const Sample& sample, double keep_prob, std::uint64_t seed,
                      const MaskProvider& masks = {}, InterpMode mask_resize = InterpMode::nearest);

// Seed used for the fixed sparsification of the i-th sample of a split.
std::uint64_t sample_sparsity_seed(std::uint64_t run_seed, std::size_t index, bool training);

}  // namespace iadc
