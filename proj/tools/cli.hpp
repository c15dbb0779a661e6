#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "iadc/config.hpp"

namespace iadc::cli {

enum ExitCode : int { kSuccess = 0, kVerificationFailure = 1, kUsageError = 2, kIoError = 3 };

/// Parses `args` (without the program name), runs the subcommand and maps
/// exceptions to exit codes. Every file written is listed on `out` as
/// "wrote PATH".
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

struct GenDataOptions {
  std::filesystem::path out;
  std::size_t count = 10;
  std::uint64_t seed = 0;
  std::size_t height = 256;
  std::size_t width = 512;
  std::size_t objects = 6;
};

struct TrainOptions {
  std::optional<std::filesystem::path> config;
  std::filesystem::path data;
  std::filesystem::path out;
  std::optional<std::string> preset;
  std::optional<std::filesystem::path> resume;
};

struct EvalOptions {
  std::filesystem::path checkpoint;
  std::filesystem::path data;
  std::string split = "val";
  bool oracle_gt = false;  // score the ground truth against itself
  std::optional<std::filesystem::path> report;
};

struct InferOptions {
  std::filesystem::path checkpoint;
  std::filesystem::path sample;
  std::filesystem::path out;
  std::optional<double> keep_prob;
  std::optional<std::uint64_t> sparsity_seed;
};

int gen_data(const GenDataOptions& opt, std::ostream& out);
int train(const TrainOptions& opt, std::ostream& out);
int eval(const EvalOptions& opt, std::ostream& out);
int infer(const InferOptions& opt, std::ostream& out);
int gradcheck(const std::string& scope, std::ostream& out);

// "HxW" → (H, W); throws ConfigError.
std::pair<std::size_t, std::size_t> parse_size(const std::string& text);

// Number of training samples in an N-sample 80/20 split (at least one).
std::size_t train_split_count(std::size_t count);

// Sparsification seed for an evaluation-style pass over a named sample:
// the seed validation uses when `name` is listed in `split_file`, else the
// seed of validation index 0.
std::uint64_t evaluation_sparsity_seed(std::uint64_t run_seed, const std::filesystem::path& split_file,
                                       const std::string& name);

}  // namespace iadc::cli
