#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <memory>

#include "feddrl/agent.hpp"
#include "feddrl/partition.hpp"
#include "feddrl/rng.hpp"

using namespace feddrl;

namespace {

bool bitwise_equal(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  return a.size() == b.size() &&
         std::memcmp(a.data(), b.data(), sizeof(double) * static_cast<std::size_t>(a.size())) == 0;
}

std::vector<ClientReport> fake_reports(std::initializer_list<double> lb,
                                       std::initializer_list<double> la,
                                       std::initializer_list<long> n) {
  std::vector<ClientReport> out;
  auto ilb = lb.begin();
  auto ila = la.begin();
  auto in = n.begin();
  int id = 0;
  while (ilb != lb.end()) {
    ClientReport r;
    r.client_id = id++;
    r.loss_before = *ilb++;
    r.loss_after = *ila++;
    r.sample_count = *in++;
    r.params = Eigen::VectorXd::Zero(3);
    out.push_back(std::move(r));
  }
  return out;
}

Eigen::VectorXd vec(std::initializer_list<double> vals) {
  Eigen::VectorXd v(static_cast<Eigen::Index>(vals.size()));
  Eigen::Index i = 0;
  for (double x : vals) v[i++] = x;
  return v;
}

double softplus_ref(double x) {
  return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

// The raw-to-action map redone from scratch so update() internals are checked
// against an implementation that shares no code with them.
Eigen::VectorXd map_action_ref(const Eigen::VectorXd& raw, double beta) {
  const Eigen::Index k = raw.size() / 2;
  Eigen::VectorXd out(raw.size());
  for (Eigen::Index i = 0; i < k; ++i) {
    const double m = raw[i];
    out[i] = m;
    out[k + i] = std::min(softplus_ref(raw[k + i]), beta * std::abs(m));
  }
  return out;
}

Experience random_exp(std::mt19937_64& g, Eigen::Index k, double beta) {
  auto draw = [&](double lo, double hi) {
    Eigen::VectorXd v(k);
    for (Eigen::Index i = 0; i < k; ++i) v[i] = rng::uniform(g, lo, hi);
    return v;
  };
  Experience e;
  e.s.losses_before = draw(0.5, 2.0);
  e.s.losses_after = draw(0.2, 1.5);
  e.s.counts = draw(0.05, 0.3);
  e.s_next.losses_before = draw(0.4, 1.8);
  e.s_next.losses_after = draw(0.2, 1.4);
  e.s_next.counts = draw(0.05, 0.3);
  e.a.mu = draw(-1.0, 1.0);
  e.a.sigma.resize(k);
  for (Eigen::Index i = 0; i < k; ++i) e.a.sigma[i] = rng::uniform(g) * beta * std::abs(e.a.mu[i]);
  e.r = -rng::uniform(g, 0.5, 2.5);
  return e;
}

AgentConfig tiny_config(int k, std::uint64_t seed) {
  AgentConfig c;
  c.participants = k;
  c.hidden = 4;
  c.pi_layers = 2;
  c.q_layers = 2;
  c.batch_size = 4;
  c.seed = seed;
  return c;
}

double eval_scalar(Network& net, const Eigen::RowVectorXd& x) {
  const bool was = net.training();
  net.set_training(false);
  const double v = net.forward(x, {x.size()})(0, 0);
  net.set_training(was);
  return v;
}

std::pair<Dataset, Dataset> tiny_data(std::uint64_t seed) {
  SyntheticSpec s;
  s.classes = 3;
  s.dims = 4;
  s.train_samples = 300;
  s.test_samples = 90;
  s.seed = seed;
  return make_synthetic(s);
}

FlSimulation tiny_env(const std::pair<Dataset, Dataset>& data, int clients, std::uint64_t seed,
                      Aggregator agg = Aggregator::FedDrl) {
  PartitionSpec ps;
  ps.method = PartitionMethod::EqualShards;
  ps.num_clients = clients;
  ps.seed = 7;
  const auto manifest = make_partition(data.first, ps);
  RoundConfig cfg;
  cfg.total_clients = clients;
  cfg.participants = clients;
  cfg.aggregator = agg;
  cfg.seed = seed;
  cfg.sgd.epochs = 1;
  cfg.sgd.batch_size = 10;
  const auto model = mlp_layers(data.first.features.cols(), {8}, data.first.class_count);
  return FlSimulation(data.first, data.second, manifest, model, cfg);
}

}  // namespace

TEST_CASE("state layout concatenates losses and counts in report order") {
  StateNormalizer norm;
  norm.enabled = false;
  const auto reports = fake_reports({1.0, 2.0}, {0.5, 1.5}, {30, 10});
  const AggState s = build_state(reports, 4, norm);
  CHECK(s.round_index == 4);
  CHECK(bitwise_equal(s.flat(), vec({1.0, 2.0, 0.5, 1.5, 30.0, 10.0})));
  CHECK(norm.running_max_loss == doctest::Approx(2.0));
  CHECK_THROWS_AS(build_state({}, 0, norm), ConfigError);
}

TEST_CASE("state normalization divides by the running max and the count total") {
  StateNormalizer norm;
  const auto r1 = fake_reports({1.0, 2.0}, {0.5, 1.5}, {30, 10});
  const AggState s1 = build_state(r1, 0, norm);
  CHECK(s1.losses_before[0] == doctest::Approx(0.5));
  CHECK(s1.losses_before[1] == doctest::Approx(1.0));
  CHECK(s1.losses_after[1] == doctest::Approx(0.75));
  CHECK(s1.counts[0] == doctest::Approx(0.75));
  CHECK(s1.counts[1] == doctest::Approx(0.25));

  // A later round with smaller losses keeps the round-1 maximum as the scale.
  const auto r2 = fake_reports({1.0, 0.5}, {0.25, 0.25}, {20, 20});
  const AggState s2 = build_state(r2, 1, norm);
  CHECK(norm.running_max_loss == doctest::Approx(2.0));
  CHECK(s2.losses_before[0] == doctest::Approx(0.5));
  CHECK(s2.losses_after[0] == doctest::Approx(0.125));
  CHECK(s2.counts[0] == doctest::Approx(0.5));
}

TEST_CASE("raw action map clamps sigma at beta times the mean magnitude") {
  const AggAction clamped = action_from_raw(vec({1.0, 5.0}), 0.1);
  CHECK(clamped.mu[0] == doctest::Approx(1.0));
  CHECK(clamped.sigma[0] == doctest::Approx(0.1));
  clamped.validate(0.1);

  const AggAction soft = action_from_raw(vec({2.0, 0.0}), 0.5);
  CHECK(soft.mu[0] == doctest::Approx(2.0));
  CHECK(soft.sigma[0] == doctest::Approx(std::log(2.0)));

  // Large positive raw widths stay finite through the stable softplus.
  const AggAction big = action_from_raw(vec({2000.0, 900.0}), 0.5);
  CHECK(big.sigma[0] == doctest::Approx(900.0));

  CHECK_THROWS_AS(action_from_raw(vec({1.0, 2.0, 3.0}), 0.5), ConfigError);
}

TEST_CASE("greedy action selection is deterministic and noise replays from the engine") {
  AgentConfig cfg = tiny_config(2, 31);
  DdpgAgent agent(cfg);
  StateNormalizer norm;
  const AggState s = build_state(fake_reports({1.0, 2.0}, {0.5, 1.5}, {30, 10}), 0, norm);

  auto g1 = rng::engine(99);
  auto g2 = rng::engine(99);
  const AggAction a1 = select_action(agent.pi(), s, cfg.beta, false, 0.5, g1);
  const AggAction a2 = select_action(agent.pi(), s, cfg.beta, false, 0.5, g2);
  CHECK(bitwise_equal(a1.flat(), a2.flat()));
  CHECK(g1 == g2);  // no draws consumed without exploration

  // Replay with a cloned engine: noise lands on the mean entries before the
  // sigma clamp.
  auto g3 = rng::engine(123);
  auto g4 = g3;
  const AggAction noisy = select_action(agent.pi(), s, cfg.beta, true, 0.05, g3);
  Network& pi = agent.pi();
  pi.set_training(false);
  Eigen::VectorXd raw = pi.forward(s.flat().transpose(), {s.flat().size()}).row(0);
  for (Eigen::Index i = 0; i < 2; ++i) raw[i] += 0.05 * rng::gaussian(g4);
  const AggAction replay = action_from_raw(raw, cfg.beta);
  CHECK(bitwise_equal(noisy.flat(), replay.flat()));
  CHECK(g3 == g4);
}

TEST_CASE("impact factors reproduce softmax closed forms at zero sigma") {
  auto g = rng::engine(5);
  AggAction a;
  a.mu = vec({0.0, 0.0});
  a.sigma = vec({0.0, 0.0});
  auto alpha = impacts_from_action(a, g);
  CHECK(alpha.alpha[0] == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(alpha.alpha[1] == doctest::Approx(0.5).epsilon(1e-12));

  a.mu = vec({std::log(2.0), 0.0});
  alpha = impacts_from_action(a, g);
  CHECK(alpha.alpha[0] == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
  CHECK(alpha.alpha[1] == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
}

TEST_CASE("impact factors replay as softmax over seeded gaussian draws") {
  AggAction a;
  a.mu = vec({0.3, -0.2, 0.5});
  a.sigma = vec({0.1, 0.05, 0.2});
  auto g1 = rng::engine(77);
  auto g2 = g1;
  const auto alpha = impacts_from_action(a, g1);
  Eigen::VectorXd x(3);
  for (Eigen::Index i = 0; i < 3; ++i) x[i] = rng::gaussian(g2, a.mu[i], a.sigma[i]);
  CHECK(bitwise_equal(alpha.alpha, softmax_vec(x)));
}

TEST_CASE("sampled impact factors stay positive and sum to one") {
  auto g = rng::engine(13);
  auto draws = rng::engine(14);
  for (int i = 0; i < 1000; ++i) {
    Eigen::VectorXd raw(8);
    for (Eigen::Index j = 0; j < raw.size(); ++j) raw[j] = rng::uniform(draws, -3.0, 3.0);
    const AggAction a = action_from_raw(raw, 0.5);
    a.validate(0.5);
    const auto alpha = impacts_from_action(a, g);
    CHECK(std::abs(alpha.alpha.sum() - 1.0) <= 1e-9);
    CHECK(alpha.alpha.minCoeff() > 0.0);
  }
}

TEST_CASE("reward is the negated mean plus spread of next-round losses") {
  CHECK(compute_reward(vec({1.0, 1.0, 1.0})) == doctest::Approx(-1.0));
  CHECK(compute_reward(vec({2.0, 1.0})) == doctest::Approx(-2.5));
  CHECK(compute_reward(vec({0.4, 0.9, 0.2, 0.7, 0.3})) == doctest::Approx(-(0.5 + 0.7)));

  // Lower losses and tighter spread both raise the reward.
  CHECK(compute_reward(vec({0.5, 0.5})) > compute_reward(vec({0.9, 0.9})));
  CHECK(compute_reward(vec({0.7, 0.7})) > compute_reward(vec({0.4, 1.0})));
  CHECK_THROWS_AS(compute_reward(Eigen::VectorXd()), ConfigError);
}

TEST_CASE("td priority matches hand values on a single-weight value net") {
  Network q(std::vector<LayerSpec>{LayerSpec::dense(10, 1)});
  Eigen::VectorXd p = Eigen::VectorXd::Zero(q.param_count());
  p[0] = 1.0;  // output = first state entry
  q.set_params(p);

  Experience e;
  e.s.losses_before = vec({1.0, 0.0});
  e.s.losses_after = vec({0.0, 0.0});
  e.s.counts = vec({0.0, 0.0});
  e.s_next = e.s;
  e.s_next.losses_before = vec({0.0, 0.0});
  e.a.mu = vec({0.0, 0.0});
  e.a.sigma = vec({0.0, 0.0});

  e.r = 1.0;
  CHECK(td_priority(e, q, 0.99) == doctest::Approx(0.0).epsilon(1e-12));

  std::swap(e.s, e.s_next);
  e.r = 0.0;
  CHECK(td_priority(e, q, 0.99) == doctest::Approx(0.99));
}

TEST_CASE("replay buffer evicts oldest and merges in order") {
  ReplayBuffer buf(3);
  auto g = rng::engine(42);
  for (int i = 1; i <= 4; ++i) {
    Experience e = random_exp(g, 2, 0.5);
    e.r = static_cast<double>(i);
    buf.push(std::move(e));
  }
  REQUIRE(buf.size() == 3);
  CHECK(buf.at(0).r == doctest::Approx(2.0));
  CHECK(buf.at(2).r == doctest::Approx(4.0));

  ReplayBuffer a(10), b(10);
  for (int i = 0; i < 2; ++i) a.push(random_exp(g, 2, 0.5));
  for (int i = 0; i < 3; ++i) b.push(random_exp(g, 2, 0.5));
  ReplayBuffer merged(10);
  merged.merge_from(a);
  merged.merge_from(b);
  REQUIRE(merged.size() == 5);
  CHECK(bitwise_equal(merged.at(0).s.flat(), a.at(0).s.flat()));
  CHECK(bitwise_equal(merged.at(4).s.flat(), b.at(2).s.flat()));

  CHECK_THROWS_AS(ReplayBuffer(0), ConfigError);
}

TEST_CASE("replay buffer round-trips through disk bit-exactly") {
  auto g = rng::engine(8);
  ReplayBuffer buf(50);
  for (int i = 0; i < 7; ++i) buf.push(random_exp(g, 3, 0.5));

  const std::string path = std::filesystem::temp_directory_path() / "feddrl_buf_test.bin";
  buf.save(path);
  const ReplayBuffer back = ReplayBuffer::load(path);
  REQUIRE(back.size() == buf.size());
  CHECK(back.capacity() == buf.capacity());
  for (std::size_t i = 0; i < buf.size(); ++i) {
    CHECK(bitwise_equal(back.at(i).s.flat(), buf.at(i).s.flat()));
    CHECK(bitwise_equal(back.at(i).a.flat(), buf.at(i).a.flat()));
    CHECK(bitwise_equal(back.at(i).s_next.flat(), buf.at(i).s_next.flat()));
    CHECK(std::memcmp(&back.at(i).r, &buf.at(i).r, sizeof(double)) == 0);
    CHECK(std::memcmp(&back.at(i).priority, &buf.at(i).priority, sizeof(double)) == 0);
  }
  std::remove(path.c_str());
  CHECK_THROWS_AS(ReplayBuffer::load(path), ConfigError);
}

TEST_CASE("rank-inverse sampling favors the front of the sorted buffer") {
  auto g = rng::engine(3);
  CHECK_THROWS_AS(sample_rank_inverse(g, 0, 5), ConfigError);

  std::vector<int> counts(10, 0);
  const auto idx = sample_rank_inverse(g, 10, 100000);
  for (auto i : idx) {
    REQUIRE(i < counts.size());
    ++counts[i];
  }
  for (std::size_t i = 0; i + 1 < counts.size(); ++i) CHECK(counts[i] > counts[i + 1]);
  // P(rank0) = 2 * P(rank1) under 1/(rank+1) weights.
  CHECK(static_cast<double>(counts[0]) / counts[1] == doctest::Approx(2.0).epsilon(0.2));
}

TEST_CASE("soft update blends targets toward the mains by rho") {
  AgentConfig cfg = tiny_config(1, 4);
  cfg.rho = 0.02;
  DdpgAgent agent(cfg);
  const Eigen::VectorXd ones = Eigen::VectorXd::Ones(agent.pi().param_count());
  agent.pi().set_params(ones);
  agent.pi_target().set_params(Eigen::VectorXd::Zero(ones.size()));
  const Eigen::VectorXd qmain = agent.q().params();

  agent.soft_update();
  CHECK((agent.pi_target().params().array() - 0.98).abs().maxCoeff() <= 1e-15);
  CHECK((agent.q_target().params() - qmain).norm() <= 1e-15);  // q target started equal

  // Repeated blends contract the gap by rho each time.
  for (int i = 0; i < 4; ++i) agent.soft_update();
  const double gap = (agent.pi_target().params() - ones).norm();
  CHECK(gap == doctest::Approx(std::pow(0.02, 5) * std::sqrt(static_cast<double>(ones.size()))));

  AgentConfig frozen = tiny_config(1, 4);
  frozen.rho = 1.0;
  DdpgAgent still(frozen);
  const Eigen::VectorXd before = still.q_target().params();
  still.q().set_params(still.q().params() * 2.0);
  still.soft_update();
  CHECK(bitwise_equal(still.q_target().params(), before));

  AgentConfig conv = tiny_config(1, 4);
  conv.conventional_polyak = true;
  DdpgAgent c(conv);
  c.pi().set_params(Eigen::VectorXd::Ones(c.pi().param_count()));
  c.pi_target().set_params(Eigen::VectorXd::Zero(c.pi().param_count()));
  c.soft_update();
  CHECK((c.pi_target().params().array() - 0.02).abs().maxCoeff() <= 1e-15);
}

TEST_CASE("update refreshes priorities with the pre-step value net and sorts descending") {
  AgentConfig cfg = tiny_config(2, 17);
  cfg.updates_per_round = 2;
  DdpgAgent agent(cfg);
  const DdpgAgent before = agent;

  ReplayBuffer buf(100);
  auto g = rng::engine(55);
  for (int i = 0; i < 10; ++i) buf.push(random_exp(g, 2, cfg.beta));

  const auto stats = agent.update(buf);
  CHECK(stats.iterations == 2);
  CHECK(std::isfinite(stats.value_loss));
  CHECK(std::isfinite(stats.policy_objective));

  DdpgAgent oracle = before;
  for (std::size_t i = 0; i < buf.size(); ++i) {
    CHECK(buf.at(i).priority ==
          doctest::Approx(td_priority(buf.at(i), oracle.q(), cfg.gamma)).epsilon(1e-12));
    if (i > 0) CHECK(buf.at(i - 1).priority >= buf.at(i).priority);
  }

  CHECK_FALSE(bitwise_equal(agent.q().params(), before.q().params()));
  CHECK_FALSE(bitwise_equal(agent.pi().params(), before.pi().params()));

  ReplayBuffer small(100);
  small.push(random_exp(g, 2, cfg.beta));
  CHECK_THROWS_AS(agent.update(small), ConfigError);
}

TEST_CASE("one update iteration matches finite-difference gradients") {
  AgentConfig cfg = tiny_config(2, 29);
  cfg.updates_per_round = 1;
  DdpgAgent agent(cfg);
  const DdpgAgent pre = agent;

  auto g = rng::engine(61);
  Experience e = random_exp(g, 2, cfg.beta);
  ReplayBuffer buf(100);
  for (int i = 0; i < 8; ++i) buf.push(e);  // any batch is this one experience

  agent.update(buf);

  // Target y from the pre-update target nets, with the action map redone here.
  Network pit = pre.pi_target();
  Network qt = pre.q_target();
  const Eigen::RowVectorXd s2row = e.s_next.flat().transpose();
  pit.set_training(false);
  const Eigen::VectorXd raw2 = pit.forward(s2row, {s2row.size()}).row(0);
  const Eigen::VectorXd a2 = map_action_ref(raw2, cfg.beta);
  Eigen::RowVectorXd x2(s2row.size() + a2.size());
  x2 << s2row, a2.transpose();
  const double y = e.r + cfg.gamma * eval_scalar(qt, x2);

  Eigen::RowVectorXd x(x2.size());
  x << e.s.flat().transpose(), e.a.flat().transpose();

  // Value step: delta = -q_lr * d/dphi (Q(s,a) - y)^2 at the pre-update phi.
  Network qs = pre.q();
  const Eigen::VectorXd phi0 = qs.params();
  const double eps = 1e-5;
  Eigen::VectorXd fd_q(phi0.size());
  for (Eigen::Index j = 0; j < phi0.size(); ++j) {
    Eigen::VectorXd p = phi0;
    p[j] += eps;
    qs.set_params(p);
    const double lp = std::pow(eval_scalar(qs, x) - y, 2);
    p[j] -= 2.0 * eps;
    qs.set_params(p);
    const double lm = std::pow(eval_scalar(qs, x) - y, 2);
    fd_q[j] = (lp - lm) / (2.0 * eps);
  }
  const Eigen::VectorXd expect_dq = -cfg.q_lr * fd_q;
  const Eigen::VectorXd actual_dq = agent.q().params() - phi0;
  CHECK((actual_dq - expect_dq).norm() <= 1e-4 * expect_dq.norm());

  // Policy step: delta = +pi_lr * d/dtheta Q_phi1(s, map(pi_theta(s))) with
  // phi1 the value net after its step.
  Network q1 = agent.q();
  Network ps = pre.pi();
  const Eigen::VectorXd theta0 = ps.params();
  const Eigen::RowVectorXd srow = e.s.flat().transpose();
  auto objective = [&](const Eigen::VectorXd& th) {
    ps.set_params(th);
    ps.set_training(false);
    const Eigen::VectorXd raw = ps.forward(srow, {srow.size()}).row(0);
    const Eigen::VectorXd a = map_action_ref(raw, cfg.beta);
    Eigen::RowVectorXd xr(srow.size() + a.size());
    xr << srow, a.transpose();
    return eval_scalar(q1, xr);
  };
  Eigen::VectorXd fd_pi(theta0.size());
  for (Eigen::Index j = 0; j < theta0.size(); ++j) {
    Eigen::VectorXd p = theta0;
    p[j] += eps;
    const double jp = objective(p);
    p[j] -= 2.0 * eps;
    const double jm = objective(p);
    fd_pi[j] = (jp - jm) / (2.0 * eps);
  }
  const Eigen::VectorXd expect_dpi = cfg.pi_lr * fd_pi;
  const Eigen::VectorXd actual_dpi = agent.pi().params() - theta0;
  CHECK((actual_dpi - expect_dpi).norm() <= 1e-3 * expect_dpi.norm());

  // Targets blend once toward the stepped mains.
  const Eigen::VectorXd expect_qt =
      cfg.rho * pre.q_target().params() + (1.0 - cfg.rho) * agent.q().params();
  CHECK((agent.q_target().params() - expect_qt).norm() <= 1e-12);
  const Eigen::VectorXd expect_pit =
      cfg.rho * pre.pi_target().params() + (1.0 - cfg.rho) * agent.pi().params();
  CHECK((agent.pi_target().params() - expect_pit).norm() <= 1e-12);
}

TEST_CASE("agent checkpoints round-trip through a directory") {
  AgentConfig cfg = tiny_config(2, 101);
  cfg.gamma = 0.97;
  cfg.seed = 0xdeadbeefcafe1234ull;
  DdpgAgent agent(cfg);

  const std::string dir = std::filesystem::temp_directory_path() / "feddrl_agent_test";
  std::filesystem::remove_all(dir);
  save_agent(agent, dir);
  DdpgAgent back = load_agent(dir);
  CHECK(back.config().gamma == cfg.gamma);
  CHECK(back.config().seed == cfg.seed);
  CHECK(bitwise_equal(back.pi().params(), agent.pi().params()));
  CHECK(bitwise_equal(back.q().params(), agent.q().params()));
  CHECK(bitwise_equal(back.pi_target().params(), agent.pi_target().params()));
  CHECK(bitwise_equal(back.q_target().params(), agent.q_target().params()));

  // A checkpoint whose net layout disagrees with its config echo is rejected.
  AgentConfig other = tiny_config(3, 5);
  DdpgAgent wrong(other);
  save_network(wrong.pi(), dir + "/pi.net");
  CHECK_THROWS_AS(load_agent(dir), ConfigError);
  std::filesystem::remove_all(dir);
  CHECK_THROWS_AS(load_agent(dir), ConfigError);
}

TEST_CASE("strategy stores one experience per completed round and can freeze learning") {
  const auto data = tiny_data(23);
  AgentConfig acfg = tiny_config(3, 77);
  acfg.batch_size = 2;
  auto agent = std::make_shared<DdpgAgent>(acfg);
  auto buffer = std::make_shared<ReplayBuffer>(acfg.buffer_capacity);
  DrlStrategyConfig scfg;
  scfg.learn = false;
  scfg.explore = true;
  scfg.noise_decay_rounds = 5;
  auto strategy = std::make_shared<DrlStrategy>(agent, buffer, scfg);
  const Eigen::VectorXd pi0 = agent->pi().params();
  const Eigen::VectorXd q0 = agent->q().params();

  FlSimulation env = tiny_env(data, 3, 91);
  env.set_strategy(strategy);
  env.run(4);

  CHECK(buffer->size() == 3);  // first round has no completed transition
  CHECK(strategy->normalizer().running_max_loss > 0.0);
  CHECK(bitwise_equal(agent->pi().params(), pi0));
  CHECK(bitwise_equal(agent->q().params(), q0));

  // With learning frozen the stored priorities replay against the same net.
  for (std::size_t i = 0; i < buffer->size(); ++i) {
    CHECK(buffer->at(i).priority ==
          doctest::Approx(td_priority(buffer->at(i), agent->q(), acfg.gamma)).epsilon(1e-12));
  }

  CHECK(strategy->noise_scale(0) == doctest::Approx(acfg.noise_start));
  CHECK(strategy->noise_scale(4) == doctest::Approx(acfg.noise_end));
  CHECK(strategy->noise_scale(400) == doctest::Approx(acfg.noise_end));

  CHECK_THROWS_AS(strategy->impacts(env.last_reports()), ConfigError);
  auto bad = fake_reports({1.0}, {0.5}, {10});
  CHECK_THROWS_AS(strategy->observe(99, bad), ConfigError);
}

TEST_CASE("learning strategy updates the agent once the buffer holds a batch") {
  const auto data = tiny_data(29);
  AgentConfig acfg = tiny_config(3, 78);
  acfg.batch_size = 2;
  auto agent = std::make_shared<DdpgAgent>(acfg);
  auto buffer = std::make_shared<ReplayBuffer>(acfg.buffer_capacity);
  DrlStrategyConfig scfg;
  scfg.noise_decay_rounds = 6;
  auto strategy = std::make_shared<DrlStrategy>(agent, buffer, scfg);
  const Eigen::VectorXd pi0 = agent->pi().params();

  FlSimulation env = tiny_env(data, 3, 92);
  env.set_strategy(strategy);
  env.run(4);
  CHECK_FALSE(bitwise_equal(agent->pi().params(), pi0));
  CHECK(buffer->size() == 3);
}

TEST_CASE("fedavg override leaves the trajectory identical to plain fedavg") {
  const auto data = tiny_data(31);

  FlSimulation plain = tiny_env(data, 3, 55, Aggregator::FedAvg);
  plain.run(3);

  AgentConfig acfg = tiny_config(3, 79);
  auto agent = std::make_shared<DdpgAgent>(acfg);
  auto buffer = std::make_shared<ReplayBuffer>(acfg.buffer_capacity);
  DrlStrategyConfig scfg;
  scfg.fedavg_override = true;
  scfg.learn = false;
  FlSimulation shadow = tiny_env(data, 3, 55);
  shadow.set_strategy(std::make_shared<DrlStrategy>(agent, buffer, scfg));
  shadow.run(3);

  CHECK(bitwise_equal(plain.global_params(), shadow.global_params()));
  CHECK(buffer->size() == 2);  // the agent still observed every round
}

TEST_CASE("two-stage training with one worker and no offline updates copies the worker") {
  const auto data = tiny_data(37);
  AgentConfig cfg = tiny_config(3, 203);
  cfg.workers = 1;
  cfg.batch_size = 2;
  auto make_env = [&](std::uint64_t seed) { return tiny_env(data, 3, seed); };

  const TwoStageResult r = two_stage_train(make_env, cfg, 4, 0);
  REQUIRE(r.workers.size() == 1);
  CHECK(r.worker_records[0].size() == 4);
  CHECK(r.merged_buffer->size() == r.worker_buffers[0]->size());
  CHECK(bitwise_equal(r.main_agent->pi().params(), r.workers[0]->pi().params()));
  CHECK(bitwise_equal(r.main_agent->q().params(), r.workers[0]->q().params()));
  CHECK(bitwise_equal(r.main_agent->pi_target().params(), r.workers[0]->pi_target().params()));
  CHECK(bitwise_equal(r.main_agent->q_target().params(), r.workers[0]->q_target().params()));
}

TEST_CASE("two-stage training merges worker buffers and trains the main agent offline") {
  const auto data = tiny_data(41);
  AgentConfig cfg = tiny_config(3, 207);
  cfg.workers = 2;
  cfg.batch_size = 2;
  auto make_env = [&](std::uint64_t seed) { return tiny_env(data, 3, seed); };

  const TwoStageResult r = two_stage_train(make_env, cfg, 4, 3);
  REQUIRE(r.workers.size() == 2);
  CHECK(r.merged_buffer->size() == r.worker_buffers[0]->size() + r.worker_buffers[1]->size());

  // Independent environment seeds give the workers distinct trajectories.
  bool differs = false;
  for (std::size_t i = 0; i < r.worker_buffers[0]->size() && !differs; ++i)
    differs = !bitwise_equal(r.worker_buffers[0]->at(i).s.flat(), r.worker_buffers[1]->at(i).s.flat());
  CHECK(differs);

  // Offline updates move the main agent away from worker 0.
  CHECK_FALSE(bitwise_equal(r.main_agent->pi().params(), r.workers[0]->pi().params()));

  CHECK_THROWS_AS(two_stage_train(make_env, cfg, 0, 1), ConfigError);
  CHECK_THROWS_AS(two_stage_train(make_env, cfg, 1, 0), ConfigError);  // no transitions to merge
}

TEST_CASE("agent construction rejects bad configs and mismatched states") {
  AgentConfig bad = tiny_config(2, 1);
  bad.gamma = 1.5;
  CHECK_THROWS_AS(DdpgAgent{bad}, ConfigError);
  bad = tiny_config(2, 1);
  bad.beta = 0.0;
  CHECK_THROWS_AS(DdpgAgent{bad}, ConfigError);
  bad = tiny_config(2, 1);
  bad.batch_size = 0;
  CHECK_THROWS_AS(DdpgAgent{bad}, ConfigError);

  DdpgAgent agent(tiny_config(2, 1));
  CHECK(agent.state_dim() == 6);
  CHECK(agent.action_dim() == 4);
  AggState wide;
  wide.losses_before = vec({1.0, 1.0, 1.0});
  wide.losses_after = vec({1.0, 1.0, 1.0});
  wide.counts = vec({1.0, 1.0, 1.0});
  CHECK_THROWS_AS(agent.act(wide, false, 0.0), ConfigError);
}
