#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <deque>
#include <functional>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "feddrl/network.hpp"
#include "feddrl/round.hpp"

namespace feddrl {

struct AgentConfig {
  int participants = 10;  // K; state is 3K wide, actions 2K
  double gamma = 0.99;
  double rho = 0.02;
  double pi_lr = 0.0001;
  double q_lr = 0.001;
  int hidden = 256;
  int pi_layers = 3;  // dense layers in the policy net
  int q_layers = 3;   // dense layers in the value net (2 hidden + output)
  double beta = 0.5;  // sigma cap as a fraction of |mu|
  int workers = 2;
  int batch_size = 64;
  int updates_per_round = 1;  // update iterations per training invocation
  double noise_start = 0.1;
  double noise_end = 0.01;
  std::size_t buffer_capacity = 100000;
  bool normalize_state = true;
  bool conventional_polyak = false;  // target <- (1-rho)*target + rho*main
  std::uint64_t seed = 0;

  void validate() const;
};

// Sub-seed tags for every stream the agent side draws from.
namespace agent_seed {
inline constexpr std::uint64_t kPi = 1;      // policy net init
inline constexpr std::uint64_t kQ = 2;       // value net init
inline constexpr std::uint64_t kNoise = 3;   // exploration noise on mu
inline constexpr std::uint64_t kImpact = 4;  // impact-factor Gaussian draws
inline constexpr std::uint64_t kBatch = 5;   // replay batch sampling
inline constexpr std::uint64_t kEnv = 6;     // per-worker environment seeds
}  // namespace agent_seed

struct AggState {
  Eigen::VectorXd losses_before;  // K
  Eigen::VectorXd losses_after;   // K
  Eigen::VectorXd counts;         // K
  int round_index = 0;

  Eigen::VectorXd flat() const;  // [losses_before, losses_after, counts]
  void validate() const;
};

struct AggAction {
  Eigen::VectorXd mu;     // K
  Eigen::VectorXd sigma;  // K, nonnegative, sigma_k <= beta*|mu_k|

  Eigen::VectorXd flat() const;  // [mu, sigma]
  void validate(double beta) const;
};

struct Experience {
  AggState s;
  AggAction a;
  double r = 0.0;
  AggState s_next;
  double priority = 0.0;
};

class ReplayBuffer {
 public:
  explicit ReplayBuffer(std::size_t capacity = 100000);

  std::size_t capacity() const { return capacity_; }
  std::size_t size() const { return items_.size(); }
  bool empty() const { return items_.empty(); }
  Experience& at(std::size_t i) { return items_.at(i); }
  const Experience& at(std::size_t i) const { return items_.at(i); }
  std::deque<Experience>::iterator begin() { return items_.begin(); }
  std::deque<Experience>::iterator end() { return items_.end(); }

  void push(Experience e);  // evicts oldest when full
  void merge_from(const ReplayBuffer& other);

  // Fixed-width binary records behind a small text header; round indices are
  // not part of the record layout.
  void save(const std::string& path) const;
  static ReplayBuffer load(const std::string& path);

 private:
  std::size_t capacity_;
  std::deque<Experience> items_;
};

// Tracks the running maximum loss seen across rounds; disabled means states
// carry raw values.
struct StateNormalizer {
  bool enabled = true;
  double running_max_loss = 0.0;
};

// Losses scaled by the running max, counts by their sum.
AggState build_state(const std::vector<ClientReport>& reports, int round, StateNormalizer& norm);

// Maps raw policy outputs [m, t] to an action: mu = m, sigma =
// min(softplus(t), beta*|mu|).
AggAction action_from_raw(const Eigen::VectorXd& raw, double beta);

// Policy forward plus optional exploration noise on mu (added before the
// sigma clamp), then the raw-to-action map.
AggAction select_action(Network& policy, const AggState& s, double beta, bool explore,
                        double noise_scale, std::mt19937_64& g);

// x_k ~ Normal(mu_k, sigma_k), impacts = softmax(x).
ImpactVector impacts_from_action(const AggAction& a, std::mt19937_64& g);

// Negated mean-plus-gap of the next round's per-client global-model losses,
// so maximizing the reward minimizes both loss level and spread.
double compute_reward(const Eigen::VectorXd& losses_before_next);

// |r + gamma*Q(s', a) - Q(s, a)| under the given value net.
double td_priority(const Experience& e, Network& q, double gamma);

// One index per draw, P(rank) proportional to 1/(rank+1) over [0, n).
std::vector<std::size_t> sample_rank_inverse(std::mt19937_64& g, std::size_t n, std::size_t count);

struct UpdateStats {
  double value_loss = 0.0;        // mean squared TD error, averaged over iterations
  double policy_objective = 0.0;  // mean Q(s, pi(s)), averaged over iterations
  int iterations = 0;
};

class DdpgAgent {
 public:
  explicit DdpgAgent(AgentConfig cfg);

  const AgentConfig& config() const { return cfg_; }
  int state_dim() const { return 3 * cfg_.participants; }
  int action_dim() const { return 2 * cfg_.participants; }

  Network& pi() { return pi_; }
  Network& q() { return q_; }
  Network& pi_target() { return pi_target_; }
  Network& q_target() { return q_target_; }
  const Network& pi() const { return pi_; }
  const Network& q() const { return q_; }
  const Network& pi_target() const { return pi_target_; }
  const Network& q_target() const { return q_target_; }

  double q_value(const AggState& s, const AggAction& a);
  AggAction act(const AggState& s, bool explore, double noise_scale);

  // Priority refresh over the whole buffer, descending sort, then
  // updates_per_round iterations of batch sampling, value descent, policy
  // ascent, and soft target updates.
  UpdateStats update(ReplayBuffer& buffer);

  void soft_update();

 private:
  AgentConfig cfg_;
  Network pi_, q_, pi_target_, q_target_;
  std::mt19937_64 noise_engine_;
  std::mt19937_64 batch_engine_;
};

inline UpdateStats ddpg_update(DdpgAgent& agent, ReplayBuffer& buffer) { return agent.update(buffer); }

// Four network checkpoints plus a config echo inside a directory.
void save_agent(const DdpgAgent& agent, const std::string& dir);
DdpgAgent load_agent(const std::string& dir);

struct DrlStrategyConfig {
  bool learn = true;             // run update() when the buffer holds a batch
  bool explore = true;           // exploration noise on mu
  bool fedavg_override = false;  // emit n_k/n impacts while the agent still runs
  int noise_decay_rounds = 1000;
};

// Aggregation hook wiring the agent into the round loop: observe() builds the
// state, completes the previous round's experience, and learns; impacts()
// queries the policy and samples the impact factors.
class DrlStrategy : public AggregationStrategy {
 public:
  DrlStrategy(std::shared_ptr<DdpgAgent> agent, std::shared_ptr<ReplayBuffer> buffer,
              DrlStrategyConfig cfg);

  void observe(int round, const std::vector<ClientReport>& reports) override;
  ImpactVector impacts(const std::vector<ClientReport>& reports) override;

  double noise_scale(int round) const;
  const StateNormalizer& normalizer() const { return norm_; }
  const std::shared_ptr<ReplayBuffer>& buffer() const { return buffer_; }
  const std::shared_ptr<DdpgAgent>& agent() const { return agent_; }

 private:
  std::shared_ptr<DdpgAgent> agent_;
  std::shared_ptr<ReplayBuffer> buffer_;
  DrlStrategyConfig cfg_;
  StateNormalizer norm_;
  std::mt19937_64 impact_engine_;
  bool has_state_ = false;
  AggState state_;
  bool has_pending_ = false;
  AggState prev_state_;
  AggAction prev_action_;
  int observed_round_ = 0;
};

struct TwoStageResult {
  std::shared_ptr<DdpgAgent> main_agent;
  std::shared_ptr<ReplayBuffer> merged_buffer;
  std::vector<std::shared_ptr<DdpgAgent>> workers;
  std::vector<std::shared_ptr<ReplayBuffer>> worker_buffers;
  std::vector<std::vector<RoundRecord>> worker_records;
};

// Stage 1: cfg.workers initially identical agents each drive the online loop
// on an environment built from its own derived seed. Stage 2: buffers merge
// and a copy of worker 0 trains offline for offline_updates invocations.
TwoStageResult two_stage_train(const std::function<FlSimulation(std::uint64_t)>& make_env,
                               const AgentConfig& cfg, int rounds, int offline_updates);

}  // namespace feddrl
