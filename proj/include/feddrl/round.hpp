#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "feddrl/dataset.hpp"
#include "feddrl/network.hpp"
#include "feddrl/partition.hpp"

namespace feddrl {

struct ClientReport {
  int client_id = -1;
  double loss_before = 0.0;  // received global model's loss on the local shard
  double loss_after = 0.0;   // locally trained model's loss on the local shard
  long sample_count = 0;
  Eigen::VectorXd params;

  void validate() const;
};

enum class Aggregator { FedAvg, FedProx, FedDrl };

std::string aggregator_name(Aggregator a);
Aggregator aggregator_from_name(const std::string& name);

struct RoundConfig {
  int total_clients = 10;
  int participants = 10;
  int max_rounds = 1000;
  SgdConfig sgd;
  Aggregator aggregator = Aggregator::FedAvg;
  std::uint64_t seed = 0;
  int threads = 1;

  void validate() const;
};

struct ImpactVector {
  Eigen::VectorXd alpha;  // one nonnegative weight per participant, summing to 1

  void validate() const;
};

ImpactVector fedavg_impacts(const std::vector<ClientReport>& reports);

// Elementwise sum of alpha_k * params_k over the reports.
Eigen::VectorXd aggregate_weighted(const std::vector<ClientReport>& reports,
                                   const ImpactVector& impacts);

// Mean cross-entropy of the network evaluated at `params`; `net` is scratch.
double mean_loss(Network& net, const Eigen::VectorXd& params, const Eigen::MatrixXd& x,
                 const std::vector<Eigen::Index>& in_shape, const std::vector<int>& labels);

// Fraction of test samples whose argmax logit matches the label.
double evaluate_top1(Network& net, const Eigen::VectorXd& params, const Dataset& testset);

// Adaptive impact-factor hook. observe() sees the fresh reports before
// aggregation and may do arbitrary work (state building, learning); impacts()
// is the part billed as the server's per-round impact computation and is
// timed by the round loop.
class AggregationStrategy {
 public:
  virtual ~AggregationStrategy() = default;
  virtual void observe(int round, const std::vector<ClientReport>& reports) = 0;
  virtual ImpactVector impacts(const std::vector<ClientReport>& reports) = 0;
};

// Sub-seed tags for everything a simulation draws, all derived from
// RoundConfig::seed so a (config, manifest) pair fixes the trajectory.
namespace round_seed {
inline constexpr std::uint64_t kInit = 1;    // global model initialization
inline constexpr std::uint64_t kSample = 2;  // per-round participant sampling
inline constexpr std::uint64_t kClient = 3;  // per-round per-slot local SGD
}  // namespace round_seed

struct RoundRecord {
  int round = 0;  // 1-based
  double top1 = 0.0;
  double mean_loss_before = 0.0;
  double var_loss_before = 0.0;
  double aggregation_seconds = 0.0;
  double impact_seconds = 0.0;
  Eigen::VectorXd losses_before;  // per participant, slot order
  Eigen::VectorXd impacts;        // weights used for this round's aggregate
};

// Synchronous federated loop over one dataset partition: sample participants,
// broadcast, local SGD, collect reports, aggregate.
class FlSimulation {
 public:
  FlSimulation(Dataset train, Dataset test, PartitionManifest manifest,
               std::vector<LayerSpec> model, RoundConfig cfg);

  void set_strategy(std::shared_ptr<AggregationStrategy> strategy) { strategy_ = std::move(strategy); }

  const RoundConfig& config() const { return cfg_; }
  const std::vector<LayerSpec>& model() const { return model_; }
  const Eigen::VectorXd& global_params() const { return global_; }
  void set_global_params(const Eigen::VectorXd& p);
  int rounds_done() const { return rounds_done_; }
  const std::vector<ClientReport>& last_reports() const { return last_reports_; }

  RoundRecord run_round();
  std::vector<RoundRecord> run(int rounds);

 private:
  struct Shard {
    Eigen::MatrixXd x;
    std::vector<int> labels;
  };

  ClientReport train_client(int client_id, std::uint64_t sgd_seed) const;

  RoundConfig cfg_;
  std::vector<LayerSpec> model_;
  std::vector<Eigen::Index> in_shape_;
  Dataset test_;
  std::vector<Shard> shards_;
  Eigen::VectorXd global_;
  std::shared_ptr<AggregationStrategy> strategy_;
  std::vector<ClientReport> last_reports_;
  int rounds_done_ = 0;
};

}  // namespace feddrl
