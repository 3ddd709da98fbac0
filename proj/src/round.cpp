#include "feddrl/round.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <numeric>
#include <thread>

#include "feddrl/error.hpp"
#include "feddrl/rng.hpp"

namespace feddrl {

namespace {

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace

void ClientReport::validate() const {
  if (client_id < 0) throw ConfigError("report: negative client id");
  if (!std::isfinite(loss_before) || loss_before < 0.0)
    throw ConfigError("report: loss_before must be finite and nonnegative");
  if (!std::isfinite(loss_after) || loss_after < 0.0)
    throw ConfigError("report: loss_after must be finite and nonnegative");
  if (sample_count <= 0) throw ConfigError("report: sample count must be positive");
  if (params.size() == 0) throw ConfigError("report: empty params");
}

std::string aggregator_name(Aggregator a) {
  switch (a) {
    case Aggregator::FedAvg: return "fedavg";
    case Aggregator::FedProx: return "fedprox";
    case Aggregator::FedDrl: return "feddrl";
  }
  throw ConfigError("unknown aggregator");
}

Aggregator aggregator_from_name(const std::string& name) {
  if (name == "fedavg") return Aggregator::FedAvg;
  if (name == "fedprox") return Aggregator::FedProx;
  if (name == "feddrl") return Aggregator::FedDrl;
  throw ConfigError("unknown aggregator: " + name);
}

void RoundConfig::validate() const {
  if (total_clients < 1) throw ConfigError("round config: total_clients must be >= 1");
  if (participants < 1 || participants > total_clients)
    throw ConfigError("round config: need 1 <= participants <= total_clients");
  if (max_rounds < 1) throw ConfigError("round config: max_rounds must be >= 1");
  if (threads < 1) throw ConfigError("round config: threads must be >= 1");
  if (sgd.learning_rate <= 0.0) throw ConfigError("round config: learning_rate must be positive");
  if (sgd.batch_size < 1) throw ConfigError("round config: batch_size must be >= 1");
  if (sgd.epochs < 1) throw ConfigError("round config: epochs must be >= 1");
  if (sgd.proximal_mu < 0.0) throw ConfigError("round config: proximal_mu must be nonnegative");
}

void ImpactVector::validate() const {
  if (alpha.size() == 0) throw ConfigError("impacts: empty");
  double sum = 0.0;
  for (Eigen::Index i = 0; i < alpha.size(); ++i) {
    const double a = alpha[i];
    if (!std::isfinite(a) || a < 0.0) throw ConfigError("impacts: entries must be finite and nonnegative");
    sum += a;
  }
  if (std::abs(sum - 1.0) > 1e-9) throw ConfigError("impacts: must sum to 1");
}

ImpactVector fedavg_impacts(const std::vector<ClientReport>& reports) {
  if (reports.empty()) throw ConfigError("fedavg impacts: no reports");
  double total = 0.0;
  for (const auto& r : reports) total += static_cast<double>(r.sample_count);
  ImpactVector out;
  out.alpha.resize(static_cast<Eigen::Index>(reports.size()));
  for (std::size_t k = 0; k < reports.size(); ++k)
    out.alpha[static_cast<Eigen::Index>(k)] = static_cast<double>(reports[k].sample_count) / total;
  return out;
}

Eigen::VectorXd aggregate_weighted(const std::vector<ClientReport>& reports,
                                   const ImpactVector& impacts) {
  impacts.validate();
  if (static_cast<std::size_t>(impacts.alpha.size()) != reports.size())
    throw ConfigError("aggregate: impacts/report count mismatch");
  const Eigen::Index n = reports.front().params.size();
  for (const auto& r : reports)
    if (r.params.size() != n) throw ConfigError("aggregate: parameter length mismatch");
  Eigen::VectorXd out = impacts.alpha[0] * reports[0].params;
  for (std::size_t k = 1; k < reports.size(); ++k)
    out += impacts.alpha[static_cast<Eigen::Index>(k)] * reports[k].params;
  return out;
}

double mean_loss(Network& net, const Eigen::VectorXd& params, const Eigen::MatrixXd& x,
                 const std::vector<Eigen::Index>& in_shape, const std::vector<int>& labels) {
  if (x.rows() == 0) throw ConfigError("mean_loss: empty batch");
  net.set_params(params);
  const bool was_training = net.training();
  net.set_training(false);
  const Eigen::MatrixXd logits = net.forward(x, in_shape);
  net.set_training(was_training);
  return cross_entropy_with_grad(logits, labels).loss;
}

double evaluate_top1(Network& net, const Eigen::VectorXd& params, const Dataset& testset) {
  testset.validate();
  net.set_params(params);
  const bool was_training = net.training();
  net.set_training(false);
  const Eigen::MatrixXd logits = net.forward(testset.features, testset.feature_shape);
  net.set_training(was_training);
  long hits = 0;
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    Eigen::Index best = 0;
    logits.row(r).maxCoeff(&best);
    if (static_cast<int>(best) == testset.labels[static_cast<std::size_t>(r)]) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(logits.rows());
}

FlSimulation::FlSimulation(Dataset train, Dataset test, PartitionManifest manifest,
                           std::vector<LayerSpec> model, RoundConfig cfg)
    : cfg_(cfg), model_(std::move(model)), test_(std::move(test)) {
  cfg_.validate();
  train.validate();
  test_.validate();
  manifest.validate();
  if (manifest.num_clients() != cfg_.total_clients)
    throw ConfigError("simulation: manifest client count differs from round config");
  if (manifest.dataset_samples != train.sample_count())
    throw ConfigError("simulation: manifest was built for a different dataset size");
  if (train.class_count != test_.class_count)
    throw ConfigError("simulation: train/test class counts differ");

  Network probe(model_);
  in_shape_ = train.feature_shape;
  const auto out = probe.output_shape(in_shape_);
  if (out.size() != 1 || out[0] != train.class_count)
    throw ConfigError("simulation: model must emit one logit per class");

  shards_.resize(manifest.assignments.size());
  for (std::size_t k = 0; k < manifest.assignments.size(); ++k) {
    const auto& idx = manifest.assignments[k];
    auto& s = shards_[k];
    s.x.resize(static_cast<Eigen::Index>(idx.size()), train.features.cols());
    s.labels.resize(idx.size());
    for (std::size_t i = 0; i < idx.size(); ++i) {
      s.x.row(static_cast<Eigen::Index>(i)) = train.features.row(idx[i]);
      s.labels[i] = train.labels[static_cast<std::size_t>(idx[i])];
    }
  }

  probe.init_params(rng::derive(cfg_.seed, {round_seed::kInit}));
  global_ = probe.params();
}

void FlSimulation::set_global_params(const Eigen::VectorXd& p) {
  if (p.size() != global_.size()) throw ConfigError("simulation: global param size mismatch");
  global_ = p;
}

ClientReport FlSimulation::train_client(int client_id, std::uint64_t sgd_seed) const {
  const Shard& shard = shards_[static_cast<std::size_t>(client_id)];
  Network net(model_);

  ClientReport rep;
  rep.client_id = client_id;
  rep.sample_count = static_cast<long>(shard.labels.size());
  rep.loss_before = mean_loss(net, global_, shard.x, in_shape_, shard.labels);

  net.set_params(global_);
  const Eigen::VectorXd* anchor = cfg_.sgd.proximal_mu > 0.0 ? &global_ : nullptr;
  auto g = rng::engine(sgd_seed);
  std::vector<int> perm(shard.labels.size());
  std::iota(perm.begin(), perm.end(), 0);
  const Eigen::Index n = static_cast<Eigen::Index>(perm.size());
  const Eigen::Index b = std::min<Eigen::Index>(cfg_.sgd.batch_size, n);
  Eigen::MatrixXd xb(b, shard.x.cols());
  std::vector<int> yb;
  for (int epoch = 0; epoch < cfg_.sgd.epochs; ++epoch) {
    rng::shuffle(g, perm);
    for (Eigen::Index start = 0; start < n; start += b) {
      const Eigen::Index count = std::min(b, n - start);
      xb.resize(count, Eigen::NoChange);
      yb.resize(static_cast<std::size_t>(count));
      for (Eigen::Index i = 0; i < count; ++i) {
        xb.row(i) = shard.x.row(perm[static_cast<std::size_t>(start + i)]);
        yb[static_cast<std::size_t>(i)] = shard.labels[static_cast<std::size_t>(perm[static_cast<std::size_t>(start + i)])];
      }
      sgd_step(net, xb, in_shape_, yb, cfg_.sgd, anchor);
    }
  }

  rep.params = net.params();
  rep.loss_after = mean_loss(net, rep.params, shard.x, in_shape_, shard.labels);
  rep.validate();
  return rep;
}

RoundRecord FlSimulation::run_round() {
  if (cfg_.aggregator == Aggregator::FedDrl && !strategy_)
    throw ConfigError("simulation: feddrl aggregator needs a strategy");

  const int round = rounds_done_;
  auto sampler = rng::engine(rng::derive(cfg_.seed, {round_seed::kSample, static_cast<std::uint64_t>(round)}));
  const std::vector<int> picked =
      rng::sample_without_replacement(sampler, cfg_.total_clients, cfg_.participants);

  std::vector<ClientReport> reports(picked.size());
  auto work = [&](std::size_t slot) {
    const std::uint64_t s = rng::derive(
        cfg_.seed, {round_seed::kClient, static_cast<std::uint64_t>(round), static_cast<std::uint64_t>(slot)});
    reports[slot] = train_client(picked[slot], s);
  };
  if (cfg_.threads <= 1) {
    for (std::size_t slot = 0; slot < picked.size(); ++slot) work(slot);
  } else {
    std::vector<std::thread> pool;
    std::atomic<std::size_t> next{0};
    const int nt = std::min<int>(cfg_.threads, static_cast<int>(picked.size()));
    for (int t = 0; t < nt; ++t)
      pool.emplace_back([&] {
        for (std::size_t slot = next.fetch_add(1); slot < picked.size(); slot = next.fetch_add(1))
          work(slot);
      });
    for (auto& t : pool) t.join();
  }

  if (strategy_) strategy_->observe(round, reports);

  const auto t_imp = std::chrono::steady_clock::now();
  const ImpactVector impacts = strategy_ ? strategy_->impacts(reports) : fedavg_impacts(reports);
  const double impact_seconds = seconds_since(t_imp);

  const auto t_agg = std::chrono::steady_clock::now();
  global_ = aggregate_weighted(reports, impacts);
  const double aggregation_seconds = seconds_since(t_agg);

  RoundRecord rec;
  rec.round = round + 1;
  rec.impact_seconds = impact_seconds;
  rec.aggregation_seconds = aggregation_seconds;
  rec.losses_before.resize(static_cast<Eigen::Index>(reports.size()));
  for (std::size_t k = 0; k < reports.size(); ++k)
    rec.losses_before[static_cast<Eigen::Index>(k)] = reports[k].loss_before;
  rec.impacts = impacts.alpha;
  const double mean = rec.losses_before.mean();
  rec.mean_loss_before = mean;
  rec.var_loss_before = (rec.losses_before.array() - mean).square().mean();

  Network scratch(model_);
  rec.top1 = evaluate_top1(scratch, global_, test_);

  last_reports_ = std::move(reports);
  ++rounds_done_;
  return rec;
}

std::vector<RoundRecord> FlSimulation::run(int rounds) {
  const int todo = rounds < 0 ? cfg_.max_rounds : rounds;
  std::vector<RoundRecord> out;
  out.reserve(static_cast<std::size_t>(todo));
  for (int i = 0; i < todo; ++i) out.push_back(run_round());
  return out;
}

}  // namespace feddrl
