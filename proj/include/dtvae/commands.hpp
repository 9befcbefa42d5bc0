#pragma once

// Library side of the `dtvae` command-line tool. Each command takes its
// parsed options plus output streams and returns the process exit code.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "dtvae/linalg.hpp"

namespace dtvae {

enum ExitCode : int { kExitOk = 0, kExitFailure = 1, kExitUsage = 2, kExitPoisoned = 3 };

inline constexpr const char* kCheckpointFile = "checkpoint.dtvae";
inline constexpr const char* kMetricsFile = "metrics.csv";

struct TrainOptions {
  std::filesystem::path data_dir;
  std::filesystem::path out_dir;
  Index latent = 50;
  Index rank = 0;
  double epsilon = 1e-3;
  Index batch = 128;
  int epochs = 1;
  double lr = 1e-3;
  std::uint64_t seed = 0;
  Index hidden = 500;
  std::optional<Index> subset;
  bool validate = false;  // hold out the last 10,000 training images
  Index eval_samples = 1;
  std::optional<std::filesystem::path> resume;
  bool zero_init = false;
};

struct EvalOptions {
  std::filesystem::path checkpoint;
  std::filesystem::path data_dir;
  Index samples = 1;
  std::uint64_t seed = 0;
  std::optional<Index> subset;
};

struct GradcheckOptions {
  std::uint64_t seed = 0;
  Index input = 784;
  Index hidden = 8;
  Index latent = 4;
  Index rank = 2;
  double epsilon = 0.1;
  double step = 1e-5;
  double tolerance = 1e-4;
  std::string corrupt_block;  // test hook: perturb this block's analytic gradient
};

struct SelftestOptions {
  std::uint64_t seed = 20190101;
};

struct SampleOptions {
  std::filesystem::path checkpoint;
  std::filesystem::path out_dir;
  Index count = 16;
  std::uint64_t seed = 0;
};

struct BlockError {
  std::string name;
  double rel_error = 0.0;
  Index entries = 0;
};

/// Central-difference check of every parameter block of -ELBO on one
/// datapoint with frozen noise. Error per block is
/// ||analytic - numeric||_2 / max(||analytic||_2, ||numeric||_2, 1e-8).
std::vector<BlockError> gradcheck(const GradcheckOptions& opts);

struct CheckResult {
  std::string name;
  bool passed = false;
  std::string detail;
};

/// Dense-oracle suites: Woodbury round trip, Sylvester equivalence, KL
/// dense and Monte-Carlo agreement, first-order slopes, non-PD detection.
std::vector<CheckResult> run_selftest(const SelftestOptions& opts);

int cmd_train(const TrainOptions& opts, std::ostream& out, std::ostream& err);
int cmd_eval(const EvalOptions& opts, std::ostream& out, std::ostream& err);
int cmd_gradcheck(const GradcheckOptions& opts, std::ostream& out, std::ostream& err);
int cmd_selftest(const SelftestOptions& opts, std::ostream& out, std::ostream& err);
int cmd_sample(const SampleOptions& opts, std::ostream& out, std::ostream& err);

}  // namespace dtvae
