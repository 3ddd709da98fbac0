#include "feddrl/experiment.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "feddrl/error.hpp"
#include "feddrl/rng.hpp"
#include "feddrl/text.hpp"

namespace feddrl {

namespace {

using Sections = std::map<std::string, std::map<std::string, std::string>>;

Sections parse_ini(const std::string& content) {
  Sections out;
  std::istringstream in(content);
  std::string line, section;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = text::trim(line);
    if (t.empty() || t[0] == '#' || t[0] == ';') continue;
    if (t.front() == '[') {
      if (t.back() != ']')
        throw ConfigError("config line " + std::to_string(lineno) + ": unterminated section header");
      section = text::trim(t.substr(1, t.size() - 2));
      if (section.empty()) throw ConfigError("config line " + std::to_string(lineno) + ": empty section name");
      out[section];
      continue;
    }
    const auto eq = t.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
    const std::string key = text::trim(t.substr(0, eq));
    if (key.empty()) throw ConfigError("config line " + std::to_string(lineno) + ": empty key");
    if (section.empty())
      throw ConfigError("config line " + std::to_string(lineno) + ": key outside any section");
    out[section][key] = text::trim(t.substr(eq + 1));
  }
  return out;
}

bool parse_bool(const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("not a boolean: '" + v + "'");
}

std::vector<Eigen::Index> parse_index_list(const std::string& v) {
  std::vector<Eigen::Index> out;
  if (v.empty() || v == "none") return out;
  for (const auto& part : text::split(v, ','))
    out.push_back(static_cast<Eigen::Index>(text::parse_int(text::trim(part))));
  return out;
}

std::string index_list_to_string(const std::vector<Eigen::Index>& v) {
  if (v.empty()) return "none";
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ',';
    out += std::to_string(v[i]);
  }
  return out;
}

ExperimentConfig config_from_sections(const Sections& sections) {
  ExperimentConfig cfg;
  for (const auto& [sec, kv] : sections) {
    if (sec == "experiment") {
      for (const auto& [k, v] : kv) {
        if (k == "seed") cfg.seed = static_cast<std::uint64_t>(text::parse_uint(v));
        else if (k == "rounds") cfg.rounds = static_cast<int>(text::parse_int(v));
        else throw ConfigError("config: unknown key experiment." + k);
      }
    } else if (sec == "dataset") {
      auto& d = cfg.dataset;
      for (const auto& [k, v] : kv) {
        if (k == "kind") d.kind = v;
        else if (k == "classes") d.classes = static_cast<int>(text::parse_int(v));
        else if (k == "dims") d.dims = static_cast<Eigen::Index>(text::parse_int(v));
        else if (k == "train_samples") d.train_samples = static_cast<Eigen::Index>(text::parse_int(v));
        else if (k == "test_samples") d.test_samples = static_cast<Eigen::Index>(text::parse_int(v));
        else if (k == "separation") d.separation = text::parse_double(v);
        else if (k == "noise") d.noise = text::parse_double(v);
        else if (k == "dir") d.dir = v;
        else if (k == "train_images") d.train_images = v;
        else if (k == "train_labels") d.train_labels = v;
        else if (k == "test_images") d.test_images = v;
        else if (k == "test_labels") d.test_labels = v;
        else if (k == "train_limit") d.train_limit = static_cast<Eigen::Index>(text::parse_int(v));
        else if (k == "test_limit") d.test_limit = static_cast<Eigen::Index>(text::parse_int(v));
        else throw ConfigError("config: unknown key dataset." + k);
      }
    } else if (sec == "partition") {
      auto& p = cfg.partition;
      for (const auto& [k, v] : kv) {
        if (k == "method") p.method = method_from_name(v);
        else if (k == "clients") p.num_clients = static_cast<int>(text::parse_int(v));
        else if (k == "labels_per_client") p.labels_per_client = static_cast<int>(text::parse_int(v));
        else if (k == "delta") p.delta = text::parse_double(v);
        else if (k == "groups") p.groups = static_cast<int>(text::parse_int(v));
        else if (k == "pareto_shape") p.pareto_shape = text::parse_double(v);
        else if (k == "min_per_client") p.min_per_client = static_cast<int>(text::parse_int(v));
        else if (k == "quantity_low") p.quantity_low = text::parse_double(v);
        else if (k == "quantity_high") p.quantity_high = text::parse_double(v);
        else throw ConfigError("config: unknown key partition." + k);
      }
    } else if (sec == "model") {
      for (const auto& [k, v] : kv) {
        if (k == "hidden") cfg.hidden = parse_index_list(v);
        else if (k == "leak") cfg.leak = text::parse_double(v);
        else throw ConfigError("config: unknown key model." + k);
      }
    } else if (sec == "round") {
      auto& r = cfg.round;
      for (const auto& [k, v] : kv) {
        if (k == "aggregator") r.aggregator = aggregator_from_name(v);
        else if (k == "participants") r.participants = static_cast<int>(text::parse_int(v));
        else if (k == "threads") r.threads = static_cast<int>(text::parse_int(v));
        else throw ConfigError("config: unknown key round." + k);
      }
    } else if (sec == "sgd") {
      auto& s = cfg.round.sgd;
      for (const auto& [k, v] : kv) {
        if (k == "learning_rate") s.learning_rate = text::parse_double(v);
        else if (k == "batch_size") s.batch_size = static_cast<int>(text::parse_int(v));
        else if (k == "epochs") s.epochs = static_cast<int>(text::parse_int(v));
        else if (k == "proximal_mu") s.proximal_mu = text::parse_double(v);
        else throw ConfigError("config: unknown key sgd." + k);
      }
    } else if (sec == "drl") {
      auto& a = cfg.agent;
      for (const auto& [k, v] : kv) {
        if (k == "gamma") a.gamma = text::parse_double(v);
        else if (k == "rho") a.rho = text::parse_double(v);
        else if (k == "pi_lr") a.pi_lr = text::parse_double(v);
        else if (k == "q_lr") a.q_lr = text::parse_double(v);
        else if (k == "hidden") a.hidden = static_cast<int>(text::parse_int(v));
        else if (k == "pi_layers") a.pi_layers = static_cast<int>(text::parse_int(v));
        else if (k == "q_layers") a.q_layers = static_cast<int>(text::parse_int(v));
        else if (k == "beta") a.beta = text::parse_double(v);
        else if (k == "workers") a.workers = static_cast<int>(text::parse_int(v));
        else if (k == "batch_size") a.batch_size = static_cast<int>(text::parse_int(v));
        else if (k == "updates_per_round") a.updates_per_round = static_cast<int>(text::parse_int(v));
        else if (k == "noise_start") a.noise_start = text::parse_double(v);
        else if (k == "noise_end") a.noise_end = text::parse_double(v);
        else if (k == "buffer_capacity") a.buffer_capacity = static_cast<std::size_t>(text::parse_int(v));
        else if (k == "normalize_state") a.normalize_state = parse_bool(v);
        else if (k == "conventional_polyak") a.conventional_polyak = parse_bool(v);
        else if (k == "training_rounds") cfg.training_rounds = static_cast<int>(text::parse_int(v));
        else if (k == "offline_updates") cfg.offline_updates = static_cast<int>(text::parse_int(v));
        else if (k == "impact_override") cfg.impact_override = (v == "none") ? "" : v;
        else throw ConfigError("config: unknown key drl." + k);
      }
    } else if (sec == "output") {
      for (const auto& [k, v] : kv) {
        if (k == "dir") cfg.output_dir = v;
        else throw ConfigError("config: unknown key output." + k);
      }
    } else {
      throw ConfigError("config: unknown section [" + sec + "]");
    }
  }
  cfg.validate();
  return cfg;
}

void write_text(const std::string& path, const std::string& content) {
  std::ofstream f(path);
  if (!f) throw ConfigError("cannot open " + path + " for writing");
  f << content;
  if (!f) throw ConfigError("write failed for " + path);
}

void take_first(Dataset& d, Eigen::Index n) {
  if (n <= 0 || n >= d.sample_count()) return;
  d.features = d.features.topRows(n).eval();
  d.labels.resize(static_cast<std::size_t>(n));
  d.validate();
}

std::uint64_t derived(const ExperimentConfig& cfg, std::uint64_t tag) {
  return rng::derive(cfg.seed, {tag});
}

PartitionManifest build_partition(const ExperimentConfig& cfg, const Dataset& train) {
  PartitionSpec ps = cfg.partition;
  ps.seed = derived(cfg, experiment_seed::kPartition);
  return make_partition(train, ps);
}

}  // namespace

void ExperimentConfig::validate() const {
  if (rounds < 1) throw ConfigError("experiment: rounds must be >= 1");
  if (training_rounds < 0) throw ConfigError("experiment: training_rounds must be nonnegative");
  if (offline_updates < 0) throw ConfigError("experiment: offline_updates must be nonnegative");
  if (!impact_override.empty() && impact_override != "fixed:n_k/n")
    throw ConfigError("experiment: unsupported impact override '" + impact_override + "'");
  const std::string& kind = dataset.kind;
  if (kind != "synthetic" && kind != "synthetic_image" && kind != "idx" && kind != "mnist")
    throw ConfigError("experiment: unknown dataset kind '" + kind + "'");
  if (dataset.train_limit < 0 || dataset.test_limit < 0)
    throw ConfigError("experiment: dataset limits must be nonnegative");
  for (const auto h : hidden)
    if (h < 1) throw ConfigError("experiment: hidden widths must be >= 1");
  if (!(leak >= 0.0)) throw ConfigError("experiment: leak must be nonnegative");
  if (output_dir.empty()) throw ConfigError("experiment: output dir must not be empty");
}

ExperimentConfig parse_experiment_config(const std::string& content) {
  return config_from_sections(parse_ini(content));
}

ExperimentConfig parse_experiment_config(const std::string& content,
                                         const std::vector<std::string>& overrides) {
  Sections sections = parse_ini(content);
  for (const auto& ov : overrides) {
    const auto eq = ov.find('=');
    if (eq == std::string::npos) throw ConfigError("override '" + ov + "': expected section.key=value");
    const std::string lhs = text::trim(ov.substr(0, eq));
    const auto dot = lhs.find('.');
    if (dot == std::string::npos || dot == 0 || dot + 1 == lhs.size())
      throw ConfigError("override '" + ov + "': expected section.key=value");
    sections[lhs.substr(0, dot)][lhs.substr(dot + 1)] = text::trim(ov.substr(eq + 1));
  }
  return config_from_sections(sections);
}

ExperimentConfig load_experiment_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open config " + path);
  std::ostringstream buf;
  buf << f.rdbuf();
  return parse_experiment_config(buf.str());
}

std::string echo_config(const ExperimentConfig& cfg) {
  std::ostringstream out;
  out << "[experiment]\n"
      << "seed = " << cfg.seed << "\n"
      << "rounds = " << cfg.rounds << "\n\n";
  const auto& d = cfg.dataset;
  out << "[dataset]\n"
      << "kind = " << d.kind << "\n"
      << "classes = " << d.classes << "\n"
      << "dims = " << d.dims << "\n"
      << "train_samples = " << d.train_samples << "\n"
      << "test_samples = " << d.test_samples << "\n"
      << "separation = " << text::fmt_double(d.separation) << "\n"
      << "noise = " << text::fmt_double(d.noise) << "\n"
      << "dir = " << d.dir << "\n"
      << "train_images = " << d.train_images << "\n"
      << "train_labels = " << d.train_labels << "\n"
      << "test_images = " << d.test_images << "\n"
      << "test_labels = " << d.test_labels << "\n"
      << "train_limit = " << d.train_limit << "\n"
      << "test_limit = " << d.test_limit << "\n\n";
  const auto& p = cfg.partition;
  out << "[partition]\n"
      << "method = " << method_name(p.method) << "\n"
      << "clients = " << p.num_clients << "\n"
      << "labels_per_client = " << p.labels_per_client << "\n"
      << "delta = " << text::fmt_double(p.delta) << "\n"
      << "groups = " << p.groups << "\n"
      << "pareto_shape = " << text::fmt_double(p.pareto_shape) << "\n"
      << "min_per_client = " << p.min_per_client << "\n"
      << "quantity_low = " << text::fmt_double(p.quantity_low) << "\n"
      << "quantity_high = " << text::fmt_double(p.quantity_high) << "\n\n";
  out << "[model]\n"
      << "hidden = " << index_list_to_string(cfg.hidden) << "\n"
      << "leak = " << text::fmt_double(cfg.leak) << "\n\n";
  out << "[round]\n"
      << "aggregator = " << aggregator_name(cfg.round.aggregator) << "\n"
      << "participants = " << cfg.round.participants << "\n"
      << "threads = " << cfg.round.threads << "\n\n";
  const auto& s = cfg.round.sgd;
  out << "[sgd]\n"
      << "learning_rate = " << text::fmt_double(s.learning_rate) << "\n"
      << "batch_size = " << s.batch_size << "\n"
      << "epochs = " << s.epochs << "\n"
      << "proximal_mu = " << text::fmt_double(s.proximal_mu) << "\n\n";
  const auto& a = cfg.agent;
  out << "[drl]\n"
      << "gamma = " << text::fmt_double(a.gamma) << "\n"
      << "rho = " << text::fmt_double(a.rho) << "\n"
      << "pi_lr = " << text::fmt_double(a.pi_lr) << "\n"
      << "q_lr = " << text::fmt_double(a.q_lr) << "\n"
      << "hidden = " << a.hidden << "\n"
      << "pi_layers = " << a.pi_layers << "\n"
      << "q_layers = " << a.q_layers << "\n"
      << "beta = " << text::fmt_double(a.beta) << "\n"
      << "workers = " << a.workers << "\n"
      << "batch_size = " << a.batch_size << "\n"
      << "updates_per_round = " << a.updates_per_round << "\n"
      << "noise_start = " << text::fmt_double(a.noise_start) << "\n"
      << "noise_end = " << text::fmt_double(a.noise_end) << "\n"
      << "buffer_capacity = " << a.buffer_capacity << "\n"
      << "normalize_state = " << (a.normalize_state ? "true" : "false") << "\n"
      << "conventional_polyak = " << (a.conventional_polyak ? "true" : "false") << "\n"
      << "training_rounds = " << cfg.training_rounds << "\n"
      << "offline_updates = " << cfg.offline_updates << "\n"
      << "impact_override = " << (cfg.impact_override.empty() ? "none" : cfg.impact_override) << "\n\n";
  out << "[output]\n"
      << "dir = " << cfg.output_dir << "\n";
  return out.str();
}

std::pair<Dataset, Dataset> load_dataset(const DatasetConfig& cfg, std::uint64_t derived_seed) {
  std::pair<Dataset, Dataset> data;
  if (cfg.kind == "synthetic" || cfg.kind == "synthetic_image") {
    SyntheticSpec s;
    s.classes = cfg.classes;
    s.dims = cfg.dims;
    s.train_samples = cfg.train_samples;
    s.test_samples = cfg.test_samples;
    s.separation = cfg.separation;
    s.noise = cfg.noise;
    s.image_like = cfg.kind == "synthetic_image";
    s.seed = derived_seed;
    data = make_synthetic(s);
  } else if (cfg.kind == "idx") {
    data.first = load_idx(cfg.train_images, cfg.train_labels, "idx-train");
    data.second = load_idx(cfg.test_images, cfg.test_labels, "idx-test");
  } else if (cfg.kind == "mnist") {
    data = load_mnist_dir(cfg.dir);
  } else {
    throw ConfigError("dataset: unknown kind '" + cfg.kind + "'");
  }
  take_first(data.first, cfg.train_limit);
  take_first(data.second, cfg.test_limit);
  data.first.validate();
  data.second.validate();
  if (data.first.class_count != data.second.class_count)
    throw ConfigError("dataset: train and test class counts differ");
  return data;
}

std::string cmd_partition(const ExperimentConfig& cfg) {
  cfg.validate();
  const auto data = load_dataset(cfg.dataset, derived(cfg, experiment_seed::kData));
  const PartitionManifest manifest = build_partition(cfg, data.first);
  std::filesystem::create_directories(cfg.output_dir);
  write_text(cfg.output_dir + "/config.ini", echo_config(cfg));
  write_manifest(manifest, cfg.output_dir + "/manifest.tsv");
  write_stats_csv(partition_stats(manifest, data.first), manifest, cfg.output_dir + "/stats.csv");
  return cfg.output_dir;
}

RunOutputs cmd_run(const ExperimentConfig& cfg) {
  cfg.validate();
  const auto data = load_dataset(cfg.dataset, derived(cfg, experiment_seed::kData));
  const PartitionManifest manifest = build_partition(cfg, data.first);
  const auto model = mlp_layers(data.first.feature_dim(), cfg.hidden, data.first.class_count, cfg.leak);

  RoundConfig rc = cfg.round;
  rc.total_clients = manifest.num_clients();
  rc.seed = derived(cfg, experiment_seed::kRound);
  const int stage1_rounds = cfg.training_rounds > 0 ? cfg.training_rounds : cfg.rounds;
  rc.max_rounds = std::max(cfg.rounds, stage1_rounds);
  rc.validate();

  std::filesystem::create_directories(cfg.output_dir);
  write_text(cfg.output_dir + "/config.ini", echo_config(cfg));

  RunOutputs out;
  out.dir = cfg.output_dir;

  FlSimulation sim(data.first, data.second, manifest, model, rc);
  if (rc.aggregator == Aggregator::FedDrl) {
    AgentConfig ac = cfg.agent;
    ac.participants = rc.participants;
    ac.seed = derived(cfg, experiment_seed::kAgent);
    std::shared_ptr<DdpgAgent> agent;
    if (cfg.impact_override.empty()) {
      auto make_env = [&](std::uint64_t env_seed) {
        RoundConfig erc = rc;
        erc.seed = env_seed;
        return FlSimulation(data.first, data.second, manifest, model, erc);
      };
      agent = two_stage_train(make_env, ac, stage1_rounds, cfg.offline_updates).main_agent;
    } else {
      agent = std::make_shared<DdpgAgent>(ac);
    }
    DrlStrategyConfig sc;
    sc.learn = false;
    sc.explore = false;
    sc.fedavg_override = !cfg.impact_override.empty();
    sc.noise_decay_rounds = cfg.rounds;
    sim.set_strategy(
        std::make_shared<DrlStrategy>(agent, std::make_shared<ReplayBuffer>(ac.buffer_capacity), sc));
    out.records = sim.run(cfg.rounds);
    save_agent(*agent, cfg.output_dir + "/agent");
  } else {
    out.records = sim.run(cfg.rounds);
  }

  save_run_log(run_log_from_records(out.records), cfg.output_dir + "/run.csv");
  Network net(model);
  net.set_params(sim.global_params());
  save_network(net, cfg.output_dir + "/model.net");
  return out;
}

std::string cmd_report(const std::vector<std::string>& run_dirs, double target, int window,
                       const std::string& out_dir) {
  if (run_dirs.empty()) throw ConfigError("report: no run directories given");
  std::vector<TaggedRun> runs;
  for (const auto& dir : run_dirs) {
    const ExperimentConfig cfg = load_experiment_config(dir + "/config.ini");
    TaggedRun t;
    t.method = aggregator_name(cfg.round.aggregator);
    t.partition = method_name(cfg.partition.method);
    t.log = load_run_log(dir + "/run.csv");
    if (t.log.rounds.empty()) throw ConfigError("report: empty run log in " + dir);
    runs.push_back(std::move(t));
  }
  std::filesystem::create_directories(out_dir);
  write_accuracy_curves(runs, window, out_dir + "/curves.csv");
  write_loss_ratio_csv(runs, aggregator_name(Aggregator::FedDrl), out_dir + "/loss_ratios.csv");
  write_convergence_csv(runs, target, out_dir + "/convergence.csv");
  write_timing_csv(runs, out_dir + "/timing.csv");
  const std::string table = summary_table(runs);
  write_text(out_dir + "/summary.txt", table);
  return table;
}

std::vector<std::string> cmd_sweep(const std::string& config_text,
                                   const std::vector<std::string>& overrides, const std::string& key,
                                   const std::vector<std::string>& values) {
  if (values.empty()) throw ConfigError("sweep: no values given");
  if (key.find('.') == std::string::npos || key.front() == '.' || key.back() == '.')
    throw ConfigError("sweep: key must look like section.key");
  std::vector<std::string> dirs;
  for (const auto& v : values) {
    auto ov = overrides;
    ov.push_back(key + "=" + v);
    ExperimentConfig cfg = parse_experiment_config(config_text, ov);
    cfg.output_dir += "/" + key + "=" + v;
    dirs.push_back(cmd_run(cfg).dir);
  }
  return dirs;
}

}  // namespace feddrl
