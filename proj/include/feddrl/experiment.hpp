#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "feddrl/agent.hpp"
#include "feddrl/metrics.hpp"
#include "feddrl/partition.hpp"
#include "feddrl/round.hpp"

namespace feddrl {

struct DatasetConfig {
  std::string kind = "synthetic";  // synthetic | synthetic_image | idx | mnist
  int classes = 10;
  Eigen::Index dims = 32;
  Eigen::Index train_samples = 1200;
  Eigen::Index test_samples = 300;
  double separation = 3.0;
  double noise = 1.0;
  std::string dir;  // mnist
  std::string train_images, train_labels, test_images, test_labels;  // idx
  Eigen::Index train_limit = 0;  // 0 keeps everything; otherwise first n rows
  Eigen::Index test_limit = 0;
};

// Everything one run needs, driven by a single global seed. The per-module
// seeds (dataset, partition, round loop, agent) are derived from it, so equal
// configs reproduce equal artifacts byte for byte.
struct ExperimentConfig {
  std::uint64_t seed = 1;
  int rounds = 100;
  DatasetConfig dataset;
  PartitionSpec partition;
  std::vector<Eigen::Index> hidden = {64};
  double leak = 0.01;
  RoundConfig round;
  AgentConfig agent;
  std::string impact_override;  // "" or "fixed:n_k/n"
  int training_rounds = 0;      // stage-1 rounds; 0 means same as rounds
  int offline_updates = 200;
  std::string output_dir = "runs/out";

  void validate() const;
};

namespace experiment_seed {
inline constexpr std::uint64_t kData = 1;
inline constexpr std::uint64_t kPartition = 2;
inline constexpr std::uint64_t kRound = 3;
inline constexpr std::uint64_t kAgent = 4;
}  // namespace experiment_seed

// Sectioned key = value text. Parsing is strict: unknown sections or keys and
// malformed values all throw.
ExperimentConfig parse_experiment_config(const std::string& text);
ExperimentConfig load_experiment_config(const std::string& path);

// "section.key=value", applied on top of the parsed file (flags beat file).
ExperimentConfig parse_experiment_config(const std::string& text,
                                         const std::vector<std::string>& overrides);

// Canonical echo; parsing it back yields an equal config.
std::string echo_config(const ExperimentConfig& cfg);

std::pair<Dataset, Dataset> load_dataset(const DatasetConfig& cfg, std::uint64_t derived_seed);

struct RunOutputs {
  std::string dir;
  std::vector<RoundRecord> records;
};

// Writes config.ini, manifest.tsv, stats.csv into the output dir.
std::string cmd_partition(const ExperimentConfig& cfg);

// Executes the configured aggregator end to end; writes config.ini, run.csv,
// model.net, and for the drl aggregator an agent/ checkpoint directory.
RunOutputs cmd_run(const ExperimentConfig& cfg);

// Reads run dirs produced by cmd_run, writes the comparison artifacts
// (curves.csv, loss_ratios.csv, convergence.csv, timing.csv, summary.txt)
// into out_dir, and returns the summary table text.
std::string cmd_report(const std::vector<std::string>& run_dirs, double target, int window,
                       const std::string& out_dir);

// One cmd_run per value of the swept key, each in its own subdirectory of the
// base output dir. Returns the run directories.
std::vector<std::string> cmd_sweep(const std::string& config_text, const std::vector<std::string>& overrides,
                                   const std::string& key, const std::vector<std::string>& values);

}  // namespace feddrl
