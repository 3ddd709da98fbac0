#include <cstdio>
#include <exception>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "feddrl/error.hpp"
#include "feddrl/experiment.hpp"

namespace {

feddrl::ExperimentConfig config_from_cli(const std::string& path,
                                         const std::vector<std::string>& sets) {
  std::ifstream f(path);
  if (!f) throw feddrl::ConfigError("cannot open config " + path);
  std::ostringstream buf;
  buf << f.rdbuf();
  return feddrl::parse_experiment_config(buf.str(), sets);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"federated learning simulator"};
  app.require_subcommand(1);

  std::string config_path;
  std::vector<std::string> sets;

  auto add_config_opts = [&](CLI::App* cmd) {
    cmd->add_option("--config", config_path, "experiment config file")->required();
    cmd->add_option("--set", sets, "override as section.key=value, repeatable");
  };

  auto* part = app.add_subcommand("partition", "write a partition manifest and stats");
  add_config_opts(part);

  auto* run = app.add_subcommand("run", "run one federated training experiment");
  add_config_opts(run);

  auto* report = app.add_subcommand("report", "aggregate finished runs into report tables");
  std::vector<std::string> run_dirs;
  double target = 0.5;
  int window = 10;
  std::string out_dir = "runs/report";
  report->add_option("dirs", run_dirs, "run output directories")->required();
  report->add_option("--target", target, "accuracy threshold for convergence rounds");
  report->add_option("--window", window, "smoothing window for accuracy curves");
  report->add_option("--out", out_dir, "report output directory");

  auto* sweep = app.add_subcommand("sweep", "run one experiment per value of a config key");
  std::string sweep_key;
  std::vector<std::string> sweep_values;
  add_config_opts(sweep);
  sweep->add_option("--key", sweep_key, "config key to vary, as section.key")->required();
  sweep->add_option("--values", sweep_values, "values to sweep over")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (part->parsed()) {
      std::printf("%s\n", feddrl::cmd_partition(config_from_cli(config_path, sets)).c_str());
    } else if (run->parsed()) {
      const auto out = feddrl::cmd_run(config_from_cli(config_path, sets));
      std::printf("%s\n", out.dir.c_str());
    } else if (report->parsed()) {
      std::printf("%s", feddrl::cmd_report(run_dirs, target, window, out_dir).c_str());
    } else if (sweep->parsed()) {
      std::ifstream f(config_path);
      if (!f) throw feddrl::ConfigError("cannot open config " + config_path);
      std::ostringstream buf;
      buf << f.rdbuf();
      for (const auto& dir : feddrl::cmd_sweep(buf.str(), sets, sweep_key, sweep_values))
        std::printf("%s\n", dir.c_str());
    }
  } catch (const feddrl::ConfigError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 3;
  }
  return 0;
}
