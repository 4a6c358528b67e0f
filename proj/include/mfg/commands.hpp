#pragma once

// Subcommands behind the mfgflow executable. Each returns a process exit
// code and writes human-readable progress to `log`.

#include "mfg/experiment.hpp"

#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace mfg {

enum ExitCode : int {
  kExitOk = 0,
  kExitCheckFailed = 1,
  kExitConfig = 2,
  kExitNumerical = 3,
  kExitIo = 4,
};

/// <out>/dataset.jsonl, <out>/report.jsonl
int cmd_sample(const ExperimentConfig &cfg, std::size_t threads, std::ostream &log);

/// <out>/checkpoint.bin, <out>/curves/loss.csv
int cmd_train(const ExperimentConfig &cfg, const std::string &dataset_path,
              const std::optional<std::string> &resume, std::ostream &log);

/// Without a checkpoint the solver itself is evaluated (all errors zero).
/// <out>/metrics.csv, <out>/curves/eval_pair_<i>.csv, <out>/curves/error_per_time.csv
int cmd_eval(const ExperimentConfig &cfg, const std::optional<std::string> &checkpoint,
             std::size_t threads, std::ostream &log);

/// <out>/summary.csv, <out>/curves/sweep_w<W>_trial<t>.csv
int cmd_sweep(const ExperimentConfig &cfg, const std::string &dataset_path,
              const std::vector<std::size_t> &widths, std::size_t trials, std::ostream &log);

/// Preflight diagnostics; kExitCheckFailed when any of them fails.
int cmd_check(const ExperimentConfig &cfg, const std::optional<std::string> &checkpoint,
              std::ostream &log);

/// Single Picard solve dumped as JSONL to <out>/trajectory.jsonl.
int cmd_solve(const ExperimentConfig &cfg, const std::vector<double> &eta,
              const std::vector<double> &kappa, std::ostream &log);

int run_cli(int argc, const char *const *argv, std::ostream &out, std::ostream &err);

} // namespace mfg
