#include "feddrl/agent.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>

#include "feddrl/error.hpp"
#include "feddrl/rng.hpp"
#include "feddrl/text.hpp"

namespace feddrl {

namespace {

static_assert(std::numeric_limits<double>::is_iec559, "IEEE-754 doubles required");

double softplus(double x) {
  return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

double sigmoid(double x) {
  if (x > 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// Raw policy outputs [m | t] mapped to [mu | sigma] with the branch data the
// policy gradient needs to chain through the map.
struct ActionMap {
  Eigen::MatrixXd action;   // rows x 2K
  Eigen::ArrayXXd clamped;  // rows x K, 1 where sigma hit beta*|mu|
  Eigen::ArrayXXd dsig_dt;  // rows x K, sigmoid(t) on the softplus branch
  Eigen::ArrayXXd msign;    // rows x K
};

ActionMap map_raw(const Eigen::MatrixXd& raw, double beta) {
  if (raw.cols() % 2 != 0 || raw.cols() == 0) throw ConfigError("action map: raw width must be 2K");
  const Eigen::Index k = raw.cols() / 2;
  ActionMap out;
  out.action.resize(raw.rows(), raw.cols());
  out.clamped.resize(raw.rows(), k);
  out.dsig_dt.resize(raw.rows(), k);
  out.msign.resize(raw.rows(), k);
  for (Eigen::Index r = 0; r < raw.rows(); ++r) {
    for (Eigen::Index i = 0; i < k; ++i) {
      const double m = raw(r, i);
      const double t = raw(r, k + i);
      const double sp = softplus(t);
      const double cap = beta * std::abs(m);
      const bool clamp = sp > cap;
      out.action(r, i) = m;
      out.action(r, k + i) = clamp ? cap : sp;
      out.clamped(r, i) = clamp ? 1.0 : 0.0;
      out.dsig_dt(r, i) = sigmoid(t);
      out.msign(r, i) = m > 0.0 ? 1.0 : (m < 0.0 ? -1.0 : 0.0);
    }
  }
  return out;
}

Eigen::MatrixXd chain_action_grad(const ActionMap& map, const Eigen::MatrixXd& d_action,
                                  double beta) {
  const Eigen::Index k = map.clamped.cols();
  Eigen::MatrixXd d_raw(d_action.rows(), d_action.cols());
  d_raw.leftCols(k) =
      d_action.leftCols(k).array() + d_action.rightCols(k).array() * map.clamped * beta * map.msign;
  d_raw.rightCols(k) = d_action.rightCols(k).array() * (1.0 - map.clamped) * map.dsig_dt;
  return d_raw;
}

// Batched scalar value-net evaluation without touching its training cache.
Eigen::VectorXd q_values_eval(Network& q, const Eigen::MatrixXd& x) {
  const bool was = q.training();
  q.set_training(false);
  Eigen::VectorXd out(x.rows());
  const Eigen::Index chunk = 4096;
  for (Eigen::Index r0 = 0; r0 < x.rows(); r0 += chunk) {
    const Eigen::Index n = std::min(chunk, x.rows() - r0);
    out.segment(r0, n) = q.forward(x.middleRows(r0, n), {x.cols()}).col(0);
  }
  q.set_training(was);
  return out;
}

Eigen::RowVectorXd state_action_row(const AggState& s, const AggAction& a) {
  const Eigen::VectorXd sf = s.flat();
  const Eigen::VectorXd af = a.flat();
  Eigen::RowVectorXd row(sf.size() + af.size());
  row << sf.transpose(), af.transpose();
  return row;
}

std::vector<Eigen::Index> mlp_hidden(int layers, int width) {
  return std::vector<Eigen::Index>(static_cast<std::size_t>(layers - 1),
                                   static_cast<Eigen::Index>(width));
}

}  // namespace

void AgentConfig::validate() const {
  if (participants < 1) throw ConfigError("agent config: participants must be >= 1");
  if (gamma < 0.0 || gamma > 1.0) throw ConfigError("agent config: gamma must be in [0, 1]");
  if (rho < 0.0 || rho > 1.0) throw ConfigError("agent config: rho must be in [0, 1]");
  if (pi_lr <= 0.0 || q_lr <= 0.0) throw ConfigError("agent config: learning rates must be positive");
  if (hidden < 1) throw ConfigError("agent config: hidden width must be >= 1");
  if (pi_layers < 1 || q_layers < 1) throw ConfigError("agent config: layer counts must be >= 1");
  if (beta <= 0.0 || beta > 1.0) throw ConfigError("agent config: beta must be in (0, 1]");
  if (workers < 1) throw ConfigError("agent config: workers must be >= 1");
  if (batch_size < 1) throw ConfigError("agent config: batch size must be >= 1");
  if (updates_per_round < 1) throw ConfigError("agent config: updates per round must be >= 1");
  if (noise_start < 0.0 || noise_end < 0.0) throw ConfigError("agent config: noise scales must be nonnegative");
  if (buffer_capacity < 1) throw ConfigError("agent config: buffer capacity must be >= 1");
}

Eigen::VectorXd AggState::flat() const {
  Eigen::VectorXd out(losses_before.size() + losses_after.size() + counts.size());
  out << losses_before, losses_after, counts;
  return out;
}

void AggState::validate() const {
  const Eigen::Index k = losses_before.size();
  if (k == 0 || losses_after.size() != k || counts.size() != k)
    throw ConfigError("state: the three component vectors must share length K >= 1");
  if (!losses_before.allFinite() || !losses_after.allFinite() || !counts.allFinite())
    throw ConfigError("state: entries must be finite");
}

Eigen::VectorXd AggAction::flat() const {
  Eigen::VectorXd out(mu.size() + sigma.size());
  out << mu, sigma;
  return out;
}

void AggAction::validate(double beta) const {
  const Eigen::Index k = mu.size();
  if (k == 0 || sigma.size() != k) throw ConfigError("action: mu and sigma must share length K >= 1");
  if (!mu.allFinite() || !sigma.allFinite()) throw ConfigError("action: entries must be finite");
  for (Eigen::Index i = 0; i < k; ++i) {
    if (sigma[i] < 0.0) throw ConfigError("action: sigma must be nonnegative");
    if (sigma[i] > beta * std::abs(mu[i]) + 1e-9)
      throw ConfigError("action: sigma exceeds beta * |mu|");
  }
}

ReplayBuffer::ReplayBuffer(std::size_t capacity) : capacity_(capacity) {
  if (capacity_ < 1) throw ConfigError("replay buffer: capacity must be >= 1");
}

void ReplayBuffer::push(Experience e) {
  if (items_.size() == capacity_) items_.pop_front();
  items_.push_back(std::move(e));
}

void ReplayBuffer::merge_from(const ReplayBuffer& other) {
  for (const auto& e : other.items_) push(e);
}

void ReplayBuffer::save(const std::string& path) const {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw ConfigError("replay buffer: cannot open " + path + " for writing");
  const Eigen::Index k = items_.empty() ? 0 : items_.front().s.losses_before.size();
  f << "feddrl-buffer v1\n"
    << "participants " << k << "\n"
    << "capacity " << capacity_ << "\n"
    << "records " << items_.size() << "\n";
  for (const auto& e : items_) {
    const Eigen::VectorXd s = e.s.flat();
    const Eigen::VectorXd a = e.a.flat();
    const Eigen::VectorXd s2 = e.s_next.flat();
    if (s.size() != 3 * k || s2.size() != 3 * k || a.size() != 2 * k)
      throw ConfigError("replay buffer: mixed participant counts");
    f.write(reinterpret_cast<const char*>(s.data()), static_cast<std::streamsize>(sizeof(double) * s.size()));
    f.write(reinterpret_cast<const char*>(a.data()), static_cast<std::streamsize>(sizeof(double) * a.size()));
    f.write(reinterpret_cast<const char*>(&e.r), sizeof(double));
    f.write(reinterpret_cast<const char*>(s2.data()), static_cast<std::streamsize>(sizeof(double) * s2.size()));
    f.write(reinterpret_cast<const char*>(&e.priority), sizeof(double));
  }
  if (!f) throw ConfigError("replay buffer: write failed for " + path);
}

ReplayBuffer ReplayBuffer::load(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ConfigError("replay buffer: cannot open " + path);
  std::string magic, word;
  Eigen::Index k = 0;
  std::size_t capacity = 0, records = 0;
  std::getline(f, magic);
  if (magic != "feddrl-buffer v1") throw ConfigError("replay buffer: bad header in " + path);
  f >> word >> k;
  if (word != "participants" || k < 0) throw ConfigError("replay buffer: bad participants line");
  f >> word >> capacity;
  if (word != "capacity") throw ConfigError("replay buffer: bad capacity line");
  f >> word >> records;
  if (word != "records") throw ConfigError("replay buffer: bad records line");
  f.get();  // newline before the raw block

  ReplayBuffer out(capacity);
  auto read_vec = [&](Eigen::VectorXd& v, Eigen::Index n) {
    v.resize(n);
    f.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(sizeof(double) * n));
  };
  for (std::size_t i = 0; i < records; ++i) {
    Experience e;
    Eigen::VectorXd s(3 * k), a(2 * k), s2(3 * k);
    read_vec(s, 3 * k);
    read_vec(a, 2 * k);
    f.read(reinterpret_cast<char*>(&e.r), sizeof(double));
    read_vec(s2, 3 * k);
    f.read(reinterpret_cast<char*>(&e.priority), sizeof(double));
    if (!f) throw ConfigError("replay buffer: truncated records in " + path);
    e.s.losses_before = s.segment(0, k);
    e.s.losses_after = s.segment(k, k);
    e.s.counts = s.segment(2 * k, k);
    e.a.mu = a.segment(0, k);
    e.a.sigma = a.segment(k, k);
    e.s_next.losses_before = s2.segment(0, k);
    e.s_next.losses_after = s2.segment(k, k);
    e.s_next.counts = s2.segment(2 * k, k);
    out.push(std::move(e));
  }
  return out;
}

AggState build_state(const std::vector<ClientReport>& reports, int round, StateNormalizer& norm) {
  if (reports.empty()) throw ConfigError("state: no reports");
  const Eigen::Index k = static_cast<Eigen::Index>(reports.size());
  AggState s;
  s.round_index = round;
  s.losses_before.resize(k);
  s.losses_after.resize(k);
  s.counts.resize(k);
  for (Eigen::Index i = 0; i < k; ++i) {
    const auto& r = reports[static_cast<std::size_t>(i)];
    s.losses_before[i] = r.loss_before;
    s.losses_after[i] = r.loss_after;
    s.counts[i] = static_cast<double>(r.sample_count);
  }
  norm.running_max_loss = std::max({norm.running_max_loss, s.losses_before.maxCoeff(), s.losses_after.maxCoeff()});
  if (norm.enabled) {
    const double scale = norm.running_max_loss > 0.0 ? norm.running_max_loss : 1.0;
    s.losses_before /= scale;
    s.losses_after /= scale;
    s.counts /= s.counts.sum();
  }
  s.validate();
  return s;
}

AggAction action_from_raw(const Eigen::VectorXd& raw, double beta) {
  const ActionMap map = map_raw(raw.transpose(), beta);
  const Eigen::Index k = raw.size() / 2;
  AggAction a;
  a.mu = map.action.row(0).head(k);
  a.sigma = map.action.row(0).tail(k);
  a.validate(beta);
  return a;
}

AggAction select_action(Network& policy, const AggState& s, double beta, bool explore,
                        double noise_scale, std::mt19937_64& g) {
  s.validate();
  const Eigen::VectorXd flat = s.flat();
  const bool was = policy.training();
  policy.set_training(false);
  const Eigen::MatrixXd rawm = policy.forward(flat.transpose(), {flat.size()});
  policy.set_training(was);
  Eigen::VectorXd raw = rawm.row(0);
  if (explore) {
    const Eigen::Index k = raw.size() / 2;
    for (Eigen::Index i = 0; i < k; ++i) raw[i] += noise_scale * rng::gaussian(g);
  }
  return action_from_raw(raw, beta);
}

ImpactVector impacts_from_action(const AggAction& a, std::mt19937_64& g) {
  Eigen::VectorXd x(a.mu.size());
  for (Eigen::Index i = 0; i < x.size(); ++i) x[i] = rng::gaussian(g, a.mu[i], a.sigma[i]);
  ImpactVector out;
  out.alpha = softmax_vec(x);
  out.validate();
  return out;
}

double compute_reward(const Eigen::VectorXd& losses_before_next) {
  if (losses_before_next.size() == 0) throw ConfigError("reward: empty loss vector");
  if (!losses_before_next.allFinite()) throw ConfigError("reward: losses must be finite");
  return -(losses_before_next.mean() +
           (losses_before_next.maxCoeff() - losses_before_next.minCoeff()));
}

double td_priority(const Experience& e, Network& q, double gamma) {
  const Eigen::RowVectorXd now = state_action_row(e.s, e.a);
  const Eigen::RowVectorXd next = state_action_row(e.s_next, e.a);
  const double q_now = q_values_eval(q, now)[0];
  const double q_next = q_values_eval(q, next)[0];
  return std::abs(e.r + gamma * q_next - q_now);
}

std::vector<std::size_t> sample_rank_inverse(std::mt19937_64& g, std::size_t n, std::size_t count) {
  if (n == 0) throw ConfigError("rank sampling: empty population");
  std::vector<double> cum(n);
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    acc += 1.0 / static_cast<double>(i + 1);
    cum[i] = acc;
  }
  std::vector<std::size_t> out(count);
  for (auto& idx : out) {
    const double u = rng::uniform(g, 0.0, acc);
    const auto it = std::upper_bound(cum.begin(), cum.end(), u);
    idx = std::min<std::size_t>(static_cast<std::size_t>(it - cum.begin()), n - 1);
  }
  return out;
}

DdpgAgent::DdpgAgent(AgentConfig cfg) : cfg_(cfg) {
  cfg_.validate();
  const Eigen::Index k = cfg_.participants;
  pi_ = Network(mlp_layers(3 * k, mlp_hidden(cfg_.pi_layers, cfg_.hidden), 2 * k));
  q_ = Network(mlp_layers(5 * k, mlp_hidden(cfg_.q_layers, cfg_.hidden), 1));
  pi_.init_params(rng::derive(cfg_.seed, {agent_seed::kPi}));
  q_.init_params(rng::derive(cfg_.seed, {agent_seed::kQ}));
  pi_target_ = pi_;
  q_target_ = q_;
  noise_engine_ = rng::engine(rng::derive(cfg_.seed, {agent_seed::kNoise}));
  batch_engine_ = rng::engine(rng::derive(cfg_.seed, {agent_seed::kBatch}));
}

double DdpgAgent::q_value(const AggState& s, const AggAction& a) {
  return q_values_eval(q_, state_action_row(s, a))[0];
}

AggAction DdpgAgent::act(const AggState& s, bool explore, double noise_scale) {
  if (s.flat().size() != state_dim()) throw ConfigError("agent: state width differs from 3K");
  return select_action(pi_, s, cfg_.beta, explore, noise_scale, noise_engine_);
}

void DdpgAgent::soft_update() {
  const double keep = cfg_.conventional_polyak ? 1.0 - cfg_.rho : cfg_.rho;
  auto blend = [&](Network& target, const Network& main) {
    target.set_params(keep * target.params() + (1.0 - keep) * main.params());
  };
  blend(pi_target_, pi_);
  blend(q_target_, q_);
}

UpdateStats DdpgAgent::update(ReplayBuffer& buffer) {
  const std::size_t batch = static_cast<std::size_t>(cfg_.batch_size);
  if (buffer.size() < batch) throw ConfigError("ddpg update: buffer smaller than one batch");
  const Eigen::Index k = cfg_.participants;
  const Eigen::Index sdim = 3 * k, adim = 2 * k, qdim = 5 * k;

  // Priority refresh over the whole buffer with the current value net.
  {
    const Eigen::Index chunk = 4096;
    const Eigen::Index total = static_cast<Eigen::Index>(buffer.size());
    for (Eigen::Index r0 = 0; r0 < total; r0 += chunk) {
      const Eigen::Index n = std::min(chunk, total - r0);
      Eigen::MatrixXd now(n, qdim), next(n, qdim);
      Eigen::VectorXd r(n);
      for (Eigen::Index i = 0; i < n; ++i) {
        const Experience& e = buffer.at(static_cast<std::size_t>(r0 + i));
        now.row(i) = state_action_row(e.s, e.a);
        next.row(i) = state_action_row(e.s_next, e.a);
        r[i] = e.r;
      }
      const Eigen::VectorXd q_now = q_values_eval(q_, now);
      const Eigen::VectorXd q_next = q_values_eval(q_, next);
      for (Eigen::Index i = 0; i < n; ++i)
        buffer.at(static_cast<std::size_t>(r0 + i)).priority =
            std::abs(r[i] + cfg_.gamma * q_next[i] - q_now[i]);
    }
  }
  std::stable_sort(buffer.begin(), buffer.end(),
                   [](const Experience& a, const Experience& b) { return a.priority > b.priority; });

  UpdateStats stats;
  const Eigen::Index b = static_cast<Eigen::Index>(batch);
  for (int iter = 0; iter < cfg_.updates_per_round; ++iter) {
    const auto idx = sample_rank_inverse(batch_engine_, buffer.size(), batch);
    Eigen::MatrixXd s(b, sdim), a(b, adim), s2(b, sdim);
    Eigen::VectorXd r(b);
    for (Eigen::Index i = 0; i < b; ++i) {
      const Experience& e = buffer.at(idx[static_cast<std::size_t>(i)]);
      s.row(i) = e.s.flat().transpose();
      a.row(i) = e.a.flat().transpose();
      s2.row(i) = e.s_next.flat().transpose();
      r[i] = e.r;
    }

    // y = r + gamma * Q'(s', pi'(s'))
    pi_target_.set_training(false);
    const Eigen::MatrixXd raw2 = pi_target_.forward(s2, {sdim});
    const ActionMap a2 = map_raw(raw2, cfg_.beta);
    Eigen::MatrixXd x2(b, qdim);
    x2 << s2, a2.action;
    const Eigen::VectorXd y = r + cfg_.gamma * q_values_eval(q_target_, x2);

    // value descent on the mean squared TD error
    Eigen::MatrixXd x(b, qdim);
    x << s, a;
    q_.set_training(true);
    const Eigen::VectorXd qv = q_.forward(x, {qdim}).col(0);
    const Eigen::VectorXd diff = qv - y;
    stats.value_loss += diff.squaredNorm() / static_cast<double>(b);
    const Eigen::MatrixXd dq = (2.0 / static_cast<double>(b)) * diff;
    q_.add_scaled(q_.backward(dq).param_grad, -cfg_.q_lr);

    // policy ascent on mean Q(s, pi(s)), chained through the action map
    pi_.set_training(true);
    const Eigen::MatrixXd raw = pi_.forward(s, {sdim});
    const ActionMap am = map_raw(raw, cfg_.beta);
    Eigen::MatrixXd x3(b, qdim);
    x3 << s, am.action;
    q_.set_training(true);
    const Eigen::MatrixXd qv2 = q_.forward(x3, {qdim});
    stats.policy_objective += qv2.col(0).mean();
    const Eigen::MatrixXd dmean = Eigen::MatrixXd::Constant(b, 1, 1.0 / static_cast<double>(b));
    const Eigen::MatrixXd d_action = q_.backward(dmean).input_grad.rightCols(adim);
    const Eigen::MatrixXd d_raw = chain_action_grad(am, d_action, cfg_.beta);
    pi_.add_scaled(pi_.backward(d_raw).param_grad, cfg_.pi_lr);

    soft_update();
    ++stats.iterations;
  }
  stats.value_loss /= static_cast<double>(stats.iterations);
  stats.policy_objective /= static_cast<double>(stats.iterations);
  pi_.set_training(false);
  q_.set_training(false);
  return stats;
}

void save_agent(const DdpgAgent& agent, const std::string& dir) {
  std::filesystem::create_directories(dir);
  save_network(agent.pi(), dir + "/pi.net");
  save_network(agent.q(), dir + "/q.net");
  save_network(agent.pi_target(), dir + "/pi_target.net");
  save_network(agent.q_target(), dir + "/q_target.net");

  const AgentConfig& c = agent.config();
  std::ofstream f(dir + "/config.txt");
  if (!f) throw ConfigError("agent checkpoint: cannot write config in " + dir);
  f << "participants=" << c.participants << "\n"
    << "gamma=" << text::fmt_double(c.gamma) << "\n"
    << "rho=" << text::fmt_double(c.rho) << "\n"
    << "pi_lr=" << text::fmt_double(c.pi_lr) << "\n"
    << "q_lr=" << text::fmt_double(c.q_lr) << "\n"
    << "hidden=" << c.hidden << "\n"
    << "pi_layers=" << c.pi_layers << "\n"
    << "q_layers=" << c.q_layers << "\n"
    << "beta=" << text::fmt_double(c.beta) << "\n"
    << "workers=" << c.workers << "\n"
    << "batch_size=" << c.batch_size << "\n"
    << "updates_per_round=" << c.updates_per_round << "\n"
    << "noise_start=" << text::fmt_double(c.noise_start) << "\n"
    << "noise_end=" << text::fmt_double(c.noise_end) << "\n"
    << "buffer_capacity=" << c.buffer_capacity << "\n"
    << "normalize_state=" << (c.normalize_state ? 1 : 0) << "\n"
    << "conventional_polyak=" << (c.conventional_polyak ? 1 : 0) << "\n"
    << "seed=" << c.seed << "\n";
  if (!f) throw ConfigError("agent checkpoint: write failed in " + dir);
}

DdpgAgent load_agent(const std::string& dir) {
  std::ifstream f(dir + "/config.txt");
  if (!f) throw ConfigError("agent checkpoint: missing config in " + dir);
  AgentConfig c;
  std::string line;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("agent checkpoint: malformed config line: " + line);
    const std::string key = line.substr(0, eq);
    const std::string val = line.substr(eq + 1);
    if (key == "participants") c.participants = static_cast<int>(text::parse_int(val));
    else if (key == "gamma") c.gamma = text::parse_double(val);
    else if (key == "rho") c.rho = text::parse_double(val);
    else if (key == "pi_lr") c.pi_lr = text::parse_double(val);
    else if (key == "q_lr") c.q_lr = text::parse_double(val);
    else if (key == "hidden") c.hidden = static_cast<int>(text::parse_int(val));
    else if (key == "pi_layers") c.pi_layers = static_cast<int>(text::parse_int(val));
    else if (key == "q_layers") c.q_layers = static_cast<int>(text::parse_int(val));
    else if (key == "beta") c.beta = text::parse_double(val);
    else if (key == "workers") c.workers = static_cast<int>(text::parse_int(val));
    else if (key == "batch_size") c.batch_size = static_cast<int>(text::parse_int(val));
    else if (key == "updates_per_round") c.updates_per_round = static_cast<int>(text::parse_int(val));
    else if (key == "noise_start") c.noise_start = text::parse_double(val);
    else if (key == "noise_end") c.noise_end = text::parse_double(val);
    else if (key == "buffer_capacity") c.buffer_capacity = static_cast<std::size_t>(text::parse_int(val));
    else if (key == "normalize_state") c.normalize_state = text::parse_int(val) != 0;
    else if (key == "conventional_polyak") c.conventional_polyak = text::parse_int(val) != 0;
    else if (key == "seed") c.seed = static_cast<std::uint64_t>(text::parse_uint(val));
    else throw ConfigError("agent checkpoint: unknown config key: " + key);
  }

  DdpgAgent agent(c);
  auto restore = [&](Network& dst, const std::string& name) {
    Network loaded = load_network(dir + "/" + name);
    if (!(loaded.specs() == dst.specs()))
      throw ConfigError("agent checkpoint: " + name + " does not match the configured layout");
    dst = std::move(loaded);
  };
  restore(agent.pi(), "pi.net");
  restore(agent.q(), "q.net");
  restore(agent.pi_target(), "pi_target.net");
  restore(agent.q_target(), "q_target.net");
  return agent;
}

DrlStrategy::DrlStrategy(std::shared_ptr<DdpgAgent> agent, std::shared_ptr<ReplayBuffer> buffer,
                         DrlStrategyConfig cfg)
    : agent_(std::move(agent)), buffer_(std::move(buffer)), cfg_(cfg) {
  if (!agent_ || !buffer_) throw ConfigError("drl strategy: agent and buffer are required");
  if (cfg_.noise_decay_rounds < 1) throw ConfigError("drl strategy: noise decay span must be >= 1");
  norm_.enabled = agent_->config().normalize_state;
  impact_engine_ = rng::engine(rng::derive(agent_->config().seed, {agent_seed::kImpact}));
}

double DrlStrategy::noise_scale(int round) const {
  const auto& c = agent_->config();
  const int span = std::max(1, cfg_.noise_decay_rounds - 1);
  const double f = std::min(1.0, static_cast<double>(round) / static_cast<double>(span));
  return c.noise_start + f * (c.noise_end - c.noise_start);
}

void DrlStrategy::observe(int round, const std::vector<ClientReport>& reports) {
  const AgentConfig& c = agent_->config();
  if (static_cast<int>(reports.size()) != c.participants)
    throw ConfigError("drl strategy: report count differs from configured participants");
  AggState s = build_state(reports, round, norm_);

  if (has_pending_) {
    Eigen::VectorXd lb(static_cast<Eigen::Index>(reports.size()));
    for (Eigen::Index i = 0; i < lb.size(); ++i) lb[i] = reports[static_cast<std::size_t>(i)].loss_before;
    Experience e;
    e.s = std::move(prev_state_);
    e.a = std::move(prev_action_);
    e.r = compute_reward(lb);
    e.s_next = s;
    e.priority = td_priority(e, agent_->q(), c.gamma);
    buffer_->push(std::move(e));
    has_pending_ = false;
    if (cfg_.learn && buffer_->size() >= static_cast<std::size_t>(c.batch_size)) agent_->update(*buffer_);
  }

  state_ = std::move(s);
  has_state_ = true;
  observed_round_ = round;
}

ImpactVector DrlStrategy::impacts(const std::vector<ClientReport>& reports) {
  if (!has_state_) throw ConfigError("drl strategy: impacts requested before observe");
  AggAction a = agent_->act(state_, cfg_.explore, noise_scale(observed_round_));
  prev_state_ = std::move(state_);
  prev_action_ = a;
  has_pending_ = true;
  has_state_ = false;
  if (cfg_.fedavg_override) return fedavg_impacts(reports);
  return impacts_from_action(a, impact_engine_);
}

TwoStageResult two_stage_train(const std::function<FlSimulation(std::uint64_t)>& make_env,
                               const AgentConfig& cfg, int rounds, int offline_updates) {
  cfg.validate();
  if (!make_env) throw ConfigError("two-stage: environment factory is required");
  if (rounds < 1) throw ConfigError("two-stage: rounds must be >= 1");
  if (offline_updates < 0) throw ConfigError("two-stage: offline update count must be nonnegative");

  TwoStageResult out;
  for (int i = 0; i < cfg.workers; ++i) {
    auto agent = std::make_shared<DdpgAgent>(cfg);
    auto buffer = std::make_shared<ReplayBuffer>(cfg.buffer_capacity);
    DrlStrategyConfig scfg;
    scfg.learn = true;
    scfg.explore = true;
    scfg.fedavg_override = false;
    scfg.noise_decay_rounds = rounds;
    FlSimulation env = make_env(rng::derive(cfg.seed, {agent_seed::kEnv, static_cast<std::uint64_t>(i)}));
    env.set_strategy(std::make_shared<DrlStrategy>(agent, buffer, scfg));
    out.worker_records.push_back(env.run(rounds));
    out.workers.push_back(std::move(agent));
    out.worker_buffers.push_back(std::move(buffer));
  }

  auto merged = std::make_shared<ReplayBuffer>(cfg.buffer_capacity);
  for (const auto& b : out.worker_buffers) merged->merge_from(*b);
  if (merged->empty()) throw ConfigError("two-stage: merged buffer is empty");
  out.merged_buffer = merged;

  out.main_agent = std::make_shared<DdpgAgent>(*out.workers[0]);
  for (int u = 0; u < offline_updates; ++u) out.main_agent->update(*merged);
  return out;
}

}  // namespace feddrl
