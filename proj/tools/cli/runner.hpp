#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "vmpo/trainer.hpp"

namespace vmpo::cli {

struct SweepCell {
  TrainConfig config;
  std::filesystem::path dir;
};

// beta in {beta/2, beta, 2 beta} crossed with every objective kind the model
// supports. Each cell writes into out_dir/<objective>_beta<value>/.
std::vector<SweepCell> sweep_grid(const TrainConfig& base);

// Trains one config and writes metrics.csv (and plots) into dir.
std::vector<MetricsRow> train_to_dir(const TrainConfig& config, const std::filesystem::path& dir,
                                     bool timing, bool plots);

// Subcommands: train | verify | sweep. Returns the process exit code:
// 2 for usage or config errors, 1 for a failed verification or aborted
// run, 0 otherwise.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace vmpo::cli
