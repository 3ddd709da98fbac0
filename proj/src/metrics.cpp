#include "feddrl/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "feddrl/error.hpp"
#include "feddrl/text.hpp"

namespace feddrl {

namespace {

std::string run_label(const TaggedRun& r) { return r.method + "/" + r.partition; }

std::ofstream open_out(const std::string& path) {
  std::ofstream f(path);
  if (!f) throw ConfigError("metrics: cannot open " + path + " for writing");
  return f;
}

// Equal values normalize to exactly 1 so a run against itself is all ones
// even where the variance is exactly zero.
double ratio_of(double x, double ref) { return x == ref ? 1.0 : x / ref; }

std::string pct(double fraction) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", fraction * 100.0);
  return buf;
}

// Baselines in their customary order, the drl aggregator last, anything else
// in first-seen order in between.
std::vector<std::string> method_rows(const std::vector<TaggedRun>& runs) {
  std::vector<std::string> out;
  auto add = [&](const std::string& m) {
    if (std::find(out.begin(), out.end(), m) == out.end()) out.push_back(m);
  };
  const std::string drl = aggregator_name(Aggregator::FedDrl);
  for (const auto& canonical : {Aggregator::FedAvg, Aggregator::FedProx})
    for (const auto& r : runs)
      if (r.method == aggregator_name(canonical)) add(r.method);
  for (const auto& r : runs)
    if (r.method != drl) add(r.method);
  for (const auto& r : runs)
    if (r.method == drl) {
      add(drl);
      break;
    }
  return out;
}

}  // namespace

void RunLog::validate() const {
  Eigen::Index width = -1;
  int prev = 0;
  bool first = true;
  for (const auto& r : rounds) {
    if (!first && r.round <= prev) throw ConfigError("run log: rounds must be strictly increasing");
    prev = r.round;
    first = false;
    if (r.losses_before.size() != r.impacts.size())
      throw ConfigError("run log: per-client loss and impact widths differ");
    if (width < 0) width = r.losses_before.size();
    if (r.losses_before.size() != width)
      throw ConfigError("run log: participant width changes between rounds");
    if (!std::isfinite(r.top1) || !std::isfinite(r.mean_loss_before) ||
        !std::isfinite(r.var_loss_before) || !std::isfinite(r.aggregation_seconds) ||
        !std::isfinite(r.impact_seconds) || !r.losses_before.allFinite() || !r.impacts.allFinite())
      throw ConfigError("run log: entries must be finite");
  }
}

RunLog run_log_from_records(const std::vector<RoundRecord>& records) {
  RunLog log;
  log.rounds.reserve(records.size());
  for (const auto& rec : records) {
    RunRound r;
    r.round = rec.round;
    r.top1 = rec.top1;
    r.mean_loss_before = rec.mean_loss_before;
    r.var_loss_before = rec.var_loss_before;
    r.aggregation_seconds = rec.aggregation_seconds;
    r.impact_seconds = rec.impact_seconds;
    r.losses_before = rec.losses_before;
    r.impacts = rec.impacts;
    log.rounds.push_back(std::move(r));
  }
  log.validate();
  return log;
}

void save_run_log(const RunLog& log, const std::string& path) {
  log.validate();
  auto f = open_out(path);
  const Eigen::Index k = log.rounds.empty() ? 0 : log.rounds.front().losses_before.size();
  f << "round,top1,mean_l_before,var_l_before,aggregation_seconds,impact_seconds";
  for (Eigen::Index i = 0; i < k; ++i) f << ",lb_" << i;
  for (Eigen::Index i = 0; i < k; ++i) f << ",alpha_" << i;
  f << "\n";
  for (const auto& r : log.rounds) {
    f << r.round << ',' << text::fmt_double(r.top1) << ',' << text::fmt_double(r.mean_loss_before)
      << ',' << text::fmt_double(r.var_loss_before) << ','
      << text::fmt_double(r.aggregation_seconds) << ',' << text::fmt_double(r.impact_seconds);
    for (Eigen::Index i = 0; i < k; ++i) f << ',' << text::fmt_double(r.losses_before[i]);
    for (Eigen::Index i = 0; i < k; ++i) f << ',' << text::fmt_double(r.impacts[i]);
    f << "\n";
  }
  if (!f) throw ConfigError("metrics: write failed for " + path);
}

RunLog load_run_log(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("metrics: cannot open " + path);
  std::string line;
  if (!std::getline(f, line)) throw ConfigError("metrics: empty file " + path);
  const auto header = text::split(text::trim(line), ',');
  const std::vector<std::string> fixed = {"round",   "top1",
                                          "mean_l_before",       "var_l_before",
                                          "aggregation_seconds", "impact_seconds"};
  if (header.size() < fixed.size() || !std::equal(fixed.begin(), fixed.end(), header.begin()))
    throw ConfigError("metrics: unexpected run log header in " + path);
  const std::size_t extra = header.size() - fixed.size();
  if (extra % 2 != 0) throw ConfigError("metrics: unbalanced per-client columns in " + path);
  const Eigen::Index k = static_cast<Eigen::Index>(extra / 2);
  for (Eigen::Index i = 0; i < k; ++i) {
    if (header[fixed.size() + static_cast<std::size_t>(i)] != "lb_" + std::to_string(i) ||
        header[fixed.size() + static_cast<std::size_t>(k + i)] != "alpha_" + std::to_string(i))
      throw ConfigError("metrics: unexpected per-client column names in " + path);
  }

  RunLog log;
  while (std::getline(f, line)) {
    const auto trimmed = text::trim(line);
    if (trimmed.empty()) continue;
    const auto cells = text::split(trimmed, ',');
    if (cells.size() != header.size()) throw ConfigError("metrics: ragged row in " + path);
    RunRound r;
    r.round = static_cast<int>(text::parse_int(cells[0]));
    r.top1 = text::parse_double(cells[1]);
    r.mean_loss_before = text::parse_double(cells[2]);
    r.var_loss_before = text::parse_double(cells[3]);
    r.aggregation_seconds = text::parse_double(cells[4]);
    r.impact_seconds = text::parse_double(cells[5]);
    r.losses_before.resize(k);
    r.impacts.resize(k);
    for (Eigen::Index i = 0; i < k; ++i) {
      r.losses_before[i] = text::parse_double(cells[6 + static_cast<std::size_t>(i)]);
      r.impacts[i] = text::parse_double(cells[6 + static_cast<std::size_t>(k + i)]);
    }
    log.rounds.push_back(std::move(r));
  }
  log.validate();
  return log;
}

double best_top1(const RunLog& log) {
  if (log.rounds.empty()) throw ConfigError("best_top1: empty log");
  double best = log.rounds.front().top1;
  for (const auto& r : log.rounds) best = std::max(best, r.top1);
  return best;
}

std::vector<double> top1_series(const RunLog& log) {
  std::vector<double> out;
  out.reserve(log.rounds.size());
  for (const auto& r : log.rounds) out.push_back(r.top1);
  return out;
}

std::vector<double> mean_loss_series(const RunLog& log) {
  std::vector<double> out;
  out.reserve(log.rounds.size());
  for (const auto& r : log.rounds) out.push_back(r.mean_loss_before);
  return out;
}

std::vector<double> smooth(const std::vector<double>& series, int window) {
  if (window < 1) throw ConfigError("smooth: window must be >= 1");
  std::vector<double> out;
  const std::size_t w = static_cast<std::size_t>(window);
  for (std::size_t start = 0; start < series.size(); start += w) {
    const std::size_t stop = std::min(series.size(), start + w);
    double sum = 0.0;
    for (std::size_t i = start; i < stop; ++i) sum += series[i];
    out.push_back(sum / static_cast<double>(stop - start));
  }
  return out;
}

std::vector<LossRatios> loss_stats_normalized(const RunLog& log, const RunLog& reference) {
  log.validate();
  reference.validate();
  if (log.rounds.size() != reference.rounds.size())
    throw ConfigError("loss ratios: logs cover different numbers of rounds");
  std::vector<LossRatios> out;
  out.reserve(log.rounds.size());
  for (std::size_t i = 0; i < log.rounds.size(); ++i) {
    const auto& a = log.rounds[i];
    const auto& b = reference.rounds[i];
    if (a.round != b.round) throw ConfigError("loss ratios: round numbers disagree");
    LossRatios r;
    r.mean_ratio = ratio_of(a.mean_loss_before, b.mean_loss_before);
    r.var_ratio = ratio_of(a.var_loss_before, b.var_loss_before);
    out.push_back(r);
  }
  return out;
}

std::optional<int> rounds_to_target(const RunLog& log, double target) {
  if (!(target > 0.0) || target > 1.0) throw ConfigError("rounds_to_target: target must be in (0, 1]");
  for (const auto& r : log.rounds)
    if (r.top1 >= target) return r.round;
  return std::nullopt;
}

TimingSummary timing_summary(const RunLog& log) {
  if (log.rounds.empty()) throw ConfigError("timing summary: empty log");
  TimingSummary t;
  for (const auto& r : log.rounds) {
    t.mean_impact_seconds += r.impact_seconds;
    t.mean_aggregation_seconds += r.aggregation_seconds;
  }
  t.mean_impact_seconds /= static_cast<double>(log.rounds.size());
  t.mean_aggregation_seconds /= static_cast<double>(log.rounds.size());
  return t;
}

void write_accuracy_curves(const std::vector<TaggedRun>& runs, int window, const std::string& path) {
  if (runs.empty()) throw ConfigError("accuracy curves: no runs");
  std::vector<std::vector<double>> curves;
  std::size_t blocks = 0;
  for (const auto& r : runs) {
    curves.push_back(smooth(top1_series(r.log), window));
    blocks = std::max(blocks, curves.back().size());
  }
  auto f = open_out(path);
  f << "block";
  for (const auto& r : runs) f << ',' << run_label(r);
  f << "\n";
  for (std::size_t b = 0; b < blocks; ++b) {
    f << (b + 1);
    for (const auto& c : curves) {
      f << ',';
      if (b < c.size()) f << text::fmt_double(c[b]);
    }
    f << "\n";
  }
  if (!f) throw ConfigError("metrics: write failed for " + path);
}

void write_loss_ratio_csv(const std::vector<TaggedRun>& runs, const std::string& reference_method,
                          const std::string& path) {
  auto f = open_out(path);
  f << "partition,method,round,mean_ratio,var_ratio\n";
  std::vector<std::string> partitions;
  for (const auto& r : runs)
    if (std::find(partitions.begin(), partitions.end(), r.partition) == partitions.end())
      partitions.push_back(r.partition);
  for (const auto& part : partitions) {
    const TaggedRun* ref = nullptr;
    for (const auto& r : runs)
      if (r.partition == part && r.method == reference_method) ref = &r;
    if (!ref) continue;  // nothing to normalize against in this group
    for (const auto& r : runs) {
      if (r.partition != part) continue;
      const auto ratios = loss_stats_normalized(r.log, ref->log);
      for (std::size_t i = 0; i < ratios.size(); ++i)
        f << part << ',' << r.method << ',' << r.log.rounds[i].round << ','
          << text::fmt_double(ratios[i].mean_ratio) << ',' << text::fmt_double(ratios[i].var_ratio)
          << "\n";
    }
  }
  if (!f) throw ConfigError("metrics: write failed for " + path);
}

void write_convergence_csv(const std::vector<TaggedRun>& runs, double target, const std::string& path) {
  auto f = open_out(path);
  f << "method,partition,target,rounds\n";
  for (const auto& r : runs) {
    const auto hit = rounds_to_target(r.log, target);
    f << r.method << ',' << r.partition << ',' << text::fmt_double(target) << ',';
    if (hit) f << *hit;
    f << "\n";
  }
  if (!f) throw ConfigError("metrics: write failed for " + path);
}

void write_timing_csv(const std::vector<TaggedRun>& runs, const std::string& path) {
  auto f = open_out(path);
  f << "method,partition,rounds,mean_impact_seconds,mean_aggregation_seconds\n";
  for (const auto& r : runs) {
    const auto t = timing_summary(r.log);
    f << r.method << ',' << r.partition << ',' << r.log.rounds.size() << ','
      << text::fmt_double(t.mean_impact_seconds) << ','
      << text::fmt_double(t.mean_aggregation_seconds) << "\n";
  }
  if (!f) throw ConfigError("metrics: write failed for " + path);
}

std::string summary_table(const std::vector<TaggedRun>& runs) {
  if (runs.empty()) throw ConfigError("summary table: no runs");
  std::vector<std::string> partitions;
  for (const auto& r : runs)
    if (std::find(partitions.begin(), partitions.end(), r.partition) == partitions.end())
      partitions.push_back(r.partition);
  std::sort(partitions.begin(), partitions.end());
  const std::vector<std::string> methods = method_rows(runs);
  const std::string drl = aggregator_name(Aggregator::FedDrl);

  // Mean best-accuracy per cell; several runs of one pair average over seeds.
  auto cell = [&](const std::string& m, const std::string& p) -> std::optional<double> {
    double sum = 0.0;
    int n = 0;
    for (const auto& r : runs)
      if (r.method == m && r.partition == p) {
        sum += best_top1(r.log);
        ++n;
      }
    if (n == 0) return std::nullopt;
    return sum / n;
  };

  std::size_t label_w = std::string("impr.(b) %").size();
  for (const auto& m : methods) label_w = std::max(label_w, m.size());
  const std::size_t col_w = 10;

  std::ostringstream out;
  auto pad = [&](const std::string& s, std::size_t w) {
    return s.size() >= w ? s : s + std::string(w - s.size(), ' ');
  };
  auto rpad = [&](const std::string& s, std::size_t w) {
    return s.size() >= w ? s : std::string(w - s.size(), ' ') + s;
  };

  out << pad("method", label_w);
  for (const auto& p : partitions) out << rpad(p, col_w);
  out << "\n";
  for (const auto& m : methods) {
    out << pad(m, label_w);
    for (const auto& p : partitions) {
      const auto v = cell(m, p);
      out << rpad(v ? pct(*v) : "-", col_w);
    }
    out << "\n";
  }

  auto impr_row = [&](const std::string& title, bool against_best) {
    out << pad(title, label_w);
    for (const auto& p : partitions) {
      const auto mine = cell(drl, p);
      std::optional<double> baseline;
      for (const auto& m : methods) {
        if (m == drl) continue;
        const auto v = cell(m, p);
        if (!v) continue;
        if (!baseline || (against_best ? *v > *baseline : *v < *baseline)) baseline = v;
      }
      if (mine && baseline && *baseline > 0.0) {
        char buf[32];
        std::snprintf(buf, sizeof(buf), "%.2f", (*mine - *baseline) / *baseline * 100.0);
        out << rpad(buf, col_w);
      } else {
        out << rpad("-", col_w);
      }
    }
    out << "\n";
  };
  impr_row("impr.(a) %", true);
  impr_row("impr.(b) %", false);
  return out.str();
}

}  // namespace feddrl
