#pragma once

#include <Eigen/Dense>
#include <optional>
#include <string>
#include <vector>

#include "feddrl/round.hpp"

namespace feddrl {

// One executed round as it appears in a run CSV. The first six fields mirror
// the simulator's summary columns; the two vectors carry the per-participant
// detail behind them.
struct RunRound {
  int round = 0;
  double top1 = 0.0;
  double mean_loss_before = 0.0;
  double var_loss_before = 0.0;
  double aggregation_seconds = 0.0;
  double impact_seconds = 0.0;
  Eigen::VectorXd losses_before;
  Eigen::VectorXd impacts;
};

struct RunLog {
  std::vector<RunRound> rounds;

  void validate() const;  // strictly increasing rounds, one participant width
};

RunLog run_log_from_records(const std::vector<RoundRecord>& records);

// CSV with a header row; doubles are written in shortest round-trip form so
// save followed by load reproduces the log bit-exactly.
void save_run_log(const RunLog& log, const std::string& path);
RunLog load_run_log(const std::string& path);

double best_top1(const RunLog& log);

std::vector<double> top1_series(const RunLog& log);
std::vector<double> mean_loss_series(const RunLog& log);

// Block means over consecutive windows; a final partial block is averaged
// over its actual length.
std::vector<double> smooth(const std::vector<double>& series, int window = 10);

struct LossRatios {
  double mean_ratio = 1.0;
  double var_ratio = 1.0;
};

// Per-round mean and population-variance ratios against a reference run
// covering the same rounds. Equal numerator and denominator give exactly 1,
// which keeps self-normalization exact even at zero variance.
std::vector<LossRatios> loss_stats_normalized(const RunLog& log, const RunLog& reference);

// First round number whose top1 reaches the target, if any.
std::optional<int> rounds_to_target(const RunLog& log, double target);

struct TimingSummary {
  double mean_impact_seconds = 0.0;
  double mean_aggregation_seconds = 0.0;
};
TimingSummary timing_summary(const RunLog& log);

struct TaggedRun {
  std::string method;     // aggregator name
  std::string partition;  // partitioner label
  RunLog log;
};

// Plot-ready CSV emitters, one file per figure family.
void write_accuracy_curves(const std::vector<TaggedRun>& runs, int window, const std::string& path);
void write_loss_ratio_csv(const std::vector<TaggedRun>& runs, const std::string& reference_method,
                          const std::string& path);
void write_convergence_csv(const std::vector<TaggedRun>& runs, double target, const std::string& path);
void write_timing_csv(const std::vector<TaggedRun>& runs, const std::string& path);

// Plain-text comparison grid: methods as rows, partitioners as columns, best
// top-1 percentages in the cells, plus relative-improvement rows for the drl
// aggregator against the best and worst baseline per column.
std::string summary_table(const std::vector<TaggedRun>& runs);

}  // namespace feddrl
