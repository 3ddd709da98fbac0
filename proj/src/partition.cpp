#include "feddrl/partition.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "feddrl/error.hpp"
#include "feddrl/rng.hpp"
#include "feddrl/text.hpp"

namespace feddrl {

namespace {

using namespace partition_seed;

std::vector<std::vector<int>> label_pools(const Dataset& ds, std::uint64_t seed) {
  std::vector<std::vector<int>> pools(static_cast<std::size_t>(ds.class_count));
  for (Eigen::Index i = 0; i < ds.sample_count(); ++i)
    pools[static_cast<std::size_t>(ds.labels[static_cast<std::size_t>(i)])].push_back(
        static_cast<int>(i));
  for (std::size_t c = 0; c < pools.size(); ++c) {
    auto g = rng::engine(rng::derive(seed, {kPool, c}));
    rng::shuffle(g, pools[c]);
  }
  return pools;
}

// total units split proportionally to weights on top of per-slot floors,
// remainders to the largest fractional parts (ties to the lower index).
std::vector<long> largest_remainder(long total, const std::vector<double>& weights,
                                    const std::vector<long>& floors = {}) {
  const std::size_t n = weights.size();
  std::vector<long> out(n, 0);
  long extra = total;
  for (std::size_t i = 0; i < n; ++i) {
    const long f = floors.empty() ? 0 : floors[i];
    out[i] = f;
    extra -= f;
  }
  if (extra < 0) throw ConfigError("allocation floors exceed the available total");
  double wsum = 0.0;
  for (double w : weights) wsum += std::max(w, 0.0);
  std::vector<double> frac(n, 0.0);
  long used = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double w = wsum > 0.0 ? std::max(weights[i], 0.0) / wsum : 1.0 / static_cast<double>(n);
    const double quota = static_cast<double>(extra) * w;
    const long base = static_cast<long>(std::floor(quota));
    out[i] += base;
    used += base;
    frac[i] = quota - static_cast<double>(base);
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return frac[a] > frac[b]; });
  for (long r = 0; r < extra - used; ++r) out[order[static_cast<std::size_t>(r) % n]] += 1;
  // Rounding noise in the quotas can only be repaired from slots above floor.
  for (std::size_t r = n; used > extra && r-- > 0;) {
    const std::size_t i = order[r];
    const long f = floors.empty() ? 0 : floors[i];
    if (out[i] > f) {
      --out[i];
      --used;
    }
  }
  return out;
}

void sort_all(PartitionManifest& m) {
  for (auto& a : m.assignments) std::sort(a.begin(), a.end());
  std::sort(m.unassigned.begin(), m.unassigned.end());
}

PartitionManifest base_manifest(const Dataset& ds, const PartitionSpec& spec) {
  PartitionManifest m;
  m.spec = spec;
  m.dataset_name = ds.name;
  m.dataset_samples = ds.sample_count();
  m.dataset_classes = ds.class_count;
  m.assignments.assign(static_cast<std::size_t>(spec.num_clients), {});
  m.group_of.assign(static_cast<std::size_t>(spec.num_clients), -1);
  return m;
}

PartitionManifest partition_pareto(const Dataset& ds, const PartitionSpec& spec) {
  const int n = spec.num_clients;
  const int c = ds.class_count;
  const int lpc = spec.labels_per_client;
  if (lpc > c) throw ConfigError("pareto: labels_per_client exceeds class count");

  PartitionManifest m = base_manifest(ds, spec);
  auto pools = label_pools(ds, spec.seed);

  std::vector<int> class_order(static_cast<std::size_t>(c));
  std::iota(class_order.begin(), class_order.end(), 0);
  {
    auto g = rng::engine(rng::derive(spec.seed, {kOrder}));
    rng::shuffle(g, class_order);
  }
  std::vector<std::vector<int>> holders(static_cast<std::size_t>(c));
  for (int k = 0; k < n; ++k)
    for (int i = 0; i < lpc; ++i)
      holders[static_cast<std::size_t>(class_order[static_cast<std::size_t>((k * lpc + i) % c)])]
          .push_back(k);

  std::vector<double> weight(static_cast<std::size_t>(n));
  {
    auto g = rng::engine(rng::derive(spec.seed, {kWeight}));
    for (auto& w : weight) w = rng::pareto(g, spec.pareto_shape);
  }

  const long slot_min = (spec.min_per_client + lpc - 1) / lpc;
  for (int label = 0; label < c; ++label) {
    const auto& h = holders[static_cast<std::size_t>(label)];
    auto& pool = pools[static_cast<std::size_t>(label)];
    if (h.empty()) {
      m.unassigned.insert(m.unassigned.end(), pool.begin(), pool.end());
      continue;
    }
    const long supply = static_cast<long>(pool.size());
    if (supply < slot_min * static_cast<long>(h.size()))
      throw ConfigError("pareto: class " + std::to_string(label) +
                        " has too few samples for its clients");
    std::vector<double> w(h.size());
    for (std::size_t i = 0; i < h.size(); ++i) w[i] = weight[static_cast<std::size_t>(h[i])];
    const auto shares = largest_remainder(supply, w, std::vector<long>(h.size(), slot_min));
    std::size_t cursor = 0;
    for (std::size_t i = 0; i < h.size(); ++i) {
      auto& dst = m.assignments[static_cast<std::size_t>(h[i])];
      dst.insert(dst.end(), pool.begin() + static_cast<std::ptrdiff_t>(cursor),
                 pool.begin() + static_cast<std::ptrdiff_t>(cursor + static_cast<std::size_t>(shares[i])));
      cursor += static_cast<std::size_t>(shares[i]);
    }
  }
  sort_all(m);
  return m;
}

PartitionManifest partition_shards(const Dataset& ds, const PartitionSpec& spec) {
  const int n = spec.num_clients;
  const bool equal = spec.method == PartitionMethod::EqualShards;
  const long shard_count = static_cast<long>(n) * (equal ? 2 : 10);
  const long total = ds.sample_count();
  if (total < shard_count) throw ConfigError("shards: dataset smaller than the shard count");

  std::vector<int> order(static_cast<std::size_t>(total));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return ds.labels[static_cast<std::size_t>(a)] < ds.labels[static_cast<std::size_t>(b)];
  });

  const long base = total / shard_count;
  const long rem = total % shard_count;
  std::vector<std::pair<long, long>> shard_range(static_cast<std::size_t>(shard_count));
  long pos = 0;
  for (long s = 0; s < shard_count; ++s) {
    const long len = base + (s < rem ? 1 : 0);
    shard_range[static_cast<std::size_t>(s)] = {pos, pos + len};
    pos += len;
  }

  std::vector<int> shard_ids(static_cast<std::size_t>(shard_count));
  std::iota(shard_ids.begin(), shard_ids.end(), 0);
  {
    auto g = rng::engine(rng::derive(spec.seed, {kShard}));
    rng::shuffle(g, shard_ids);
  }

  std::vector<int> counts(static_cast<std::size_t>(n), 2);
  if (!equal) {
    auto g = rng::engine(rng::derive(spec.seed, {kCount}));
    long remaining = shard_count;
    for (int k = 0; k < n; ++k) {
      const long after = n - 1 - k;
      const long lo = std::max<long>(6, remaining - 14 * after);
      const long hi = std::min<long>(14, remaining - 6 * after);
      const long pick = rng::uniform_int(g, lo, hi);
      counts[static_cast<std::size_t>(k)] = static_cast<int>(pick);
      remaining -= pick;
    }
  }

  PartitionManifest m = base_manifest(ds, spec);
  std::size_t next = 0;
  for (int k = 0; k < n; ++k) {
    auto& dst = m.assignments[static_cast<std::size_t>(k)];
    for (int t = 0; t < counts[static_cast<std::size_t>(k)]; ++t) {
      const auto [b, e] = shard_range[static_cast<std::size_t>(shard_ids[next++])];
      for (long i = b; i < e; ++i) dst.push_back(order[static_cast<std::size_t>(i)]);
    }
  }
  sort_all(m);
  return m;
}

struct ClusterLayout {
  std::vector<int> group_sizes;                 // clients per group
  std::vector<std::vector<int>> cluster_labels; // class ids per group
};

ClusterLayout cluster_layout(const PartitionSpec& spec, int class_count) {
  const int n = spec.num_clients;
  const int g = spec.groups;
  if (class_count < g * spec.labels_per_client)
    throw ConfigError("cluster partition: class_count < groups * labels_per_client");
  const int main_size = static_cast<int>(std::llround(spec.delta * n));
  if (main_size < 1) throw ConfigError("cluster partition: main group rounds to zero clients");
  if (main_size > n) throw ConfigError("cluster partition: main group larger than client count");
  if (g == 1 && main_size != n)
    throw ConfigError("cluster partition: groups=1 leaves clients outside the main group");

  ClusterLayout lay;
  lay.group_sizes.assign(static_cast<std::size_t>(g), 0);
  lay.group_sizes[0] = main_size;
  if (g > 1) {
    const int rest = n - main_size;
    const int others = g - 1;
    for (int j = 0; j < others; ++j)
      lay.group_sizes[static_cast<std::size_t>(j + 1)] = rest / others + (j < rest % others ? 1 : 0);
  }

  std::vector<double> w(lay.group_sizes.begin(), lay.group_sizes.end());
  auto sizes = largest_remainder(class_count, w);
  // Every populated group needs at least labels_per_client classes.
  for (std::size_t j = 0; j < sizes.size(); ++j) {
    while (lay.group_sizes[j] > 0 && sizes[j] < spec.labels_per_client) {
      std::size_t donor = sizes.size();
      long best_slack = 0;
      for (std::size_t d = 0; d < sizes.size(); ++d) {
        if (d == j) continue;
        const long need = lay.group_sizes[d] > 0 ? spec.labels_per_client : 0;
        const long slack = sizes[d] - need;
        if (slack > best_slack) {
          best_slack = slack;
          donor = d;
        }
      }
      if (donor == sizes.size())
        throw ConfigError("cluster partition: cannot give every group enough classes");
      --sizes[donor];
      ++sizes[j];
    }
  }
  int next_class = 0;
  lay.cluster_labels.resize(static_cast<std::size_t>(g));
  for (std::size_t j = 0; j < sizes.size(); ++j) {
    for (long t = 0; t < sizes[j]; ++t) lay.cluster_labels[j].push_back(next_class++);
  }
  return lay;
}

PartitionManifest partition_clustered(const Dataset& ds, const PartitionSpec& spec) {
  const bool equal = spec.method == PartitionMethod::ClusterEqual;
  const int lpc = spec.labels_per_client;
  const ClusterLayout lay = cluster_layout(spec, ds.class_count);
  const std::size_t groups = lay.group_sizes.size();

  PartitionManifest m = base_manifest(ds, spec);
  auto pools = label_pools(ds, spec.seed);

  std::vector<int> first_client(groups + 1, 0);
  for (std::size_t j = 0; j < groups; ++j) {
    first_client[j + 1] = first_client[j] + lay.group_sizes[j];
    for (int k = first_client[j]; k < first_client[j + 1]; ++k)
      m.group_of[static_cast<std::size_t>(k)] = static_cast<int>(j);
  }

  // Each group shuffles its cluster's labels, then member jj holds the lpc
  // consecutive positions starting at jj*lpc, wrapping cyclically.
  std::vector<std::vector<int>> order_of(groups);
  std::vector<std::vector<std::vector<int>>> holders_of(groups);
  for (std::size_t j = 0; j < groups; ++j) {
    order_of[j] = lay.cluster_labels[j];
    auto g = rng::engine(rng::derive(spec.seed, {kCluster, j}));
    rng::shuffle(g, order_of[j]);
    const int nl = static_cast<int>(order_of[j].size());
    holders_of[j].assign(static_cast<std::size_t>(nl), {});
    for (int jj = 0; jj < lay.group_sizes[j]; ++jj)
      for (int i = 0; i < lpc; ++i)
        holders_of[j][static_cast<std::size_t>((jj * lpc + i) % nl)].push_back(jj);
  }

  auto pool_size = [&](std::size_t j, int pos) -> long {
    return static_cast<long>(pools[static_cast<std::size_t>(order_of[j][static_cast<std::size_t>(pos)])].size());
  };

  // One quantity weight per client, drawn in client order; a client's weight
  // sets its share of every label pool it holds.
  std::vector<double> weight(static_cast<std::size_t>(spec.num_clients), 0.0);
  if (!equal) {
    auto g = rng::engine(rng::derive(spec.seed, {kCount}));
    for (auto& w : weight) w = rng::log_uniform(g, spec.quantity_low, spec.quantity_high);
  }

  // The equal quota is global. Clients sharing a label form connected
  // components that can only spend their own pools, so the feasible common
  // count is the worst floor(supply / members) over all components.
  long quota = 0;
  if (equal) {
    quota = std::numeric_limits<long>::max();
    for (std::size_t j = 0; j < groups; ++j) {
      const int members = lay.group_sizes[j];
      if (members == 0) continue;
      std::vector<int> parent(static_cast<std::size_t>(members));
      std::iota(parent.begin(), parent.end(), 0);
      auto find = [&](int a) {
        while (parent[static_cast<std::size_t>(a)] != a) {
          parent[static_cast<std::size_t>(a)] = parent[static_cast<std::size_t>(parent[static_cast<std::size_t>(a)])];
          a = parent[static_cast<std::size_t>(a)];
        }
        return a;
      };
      for (const auto& h : holders_of[j])
        for (std::size_t t = 1; t < h.size(); ++t) {
          const int a = find(h[0]);
          const int b = find(h[t]);
          if (a != b) parent[static_cast<std::size_t>(b)] = a;
        }
      std::vector<long> comp_supply(static_cast<std::size_t>(members), 0);
      std::vector<long> comp_members(static_cast<std::size_t>(members), 0);
      for (int jj = 0; jj < members; ++jj) ++comp_members[static_cast<std::size_t>(find(jj))];
      for (int pos = 0; pos < static_cast<int>(holders_of[j].size()); ++pos) {
        const auto& h = holders_of[j][static_cast<std::size_t>(pos)];
        if (!h.empty()) comp_supply[static_cast<std::size_t>(find(h[0]))] += pool_size(j, pos);
      }
      for (int jj = 0; jj < members; ++jj)
        if (find(jj) == jj) quota = std::min(quota, comp_supply[static_cast<std::size_t>(jj)] / comp_members[static_cast<std::size_t>(jj)]);
    }
    if (quota < lpc)
      throw ConfigError("cluster_equal: not enough samples for one per label per client");
  }

  for (std::size_t j = 0; j < groups; ++j) {
    const int members = lay.group_sizes[j];
    const auto& order = order_of[j];
    const int nl = static_cast<int>(order.size());
    std::vector<std::size_t> cursor(static_cast<std::size_t>(nl), 0);
    auto left = [&](int pos) -> long { return pool_size(j, pos) - static_cast<long>(cursor[static_cast<std::size_t>(pos)]); };
    auto take = [&](int pos, int jj, long count) {
      const auto& pool = pools[static_cast<std::size_t>(order[static_cast<std::size_t>(pos)])];
      auto& dst = m.assignments[static_cast<std::size_t>(first_client[j] + jj)];
      auto& cur = cursor[static_cast<std::size_t>(pos)];
      dst.insert(dst.end(), pool.begin() + static_cast<std::ptrdiff_t>(cur),
                 pool.begin() + static_cast<std::ptrdiff_t>(cur + static_cast<std::size_t>(count)));
      cur += static_cast<std::size_t>(count);
    };

    if (members > 0 && equal) {
      std::vector<long> need(static_cast<std::size_t>(members), quota);
      for (int jj = 0; jj < members; ++jj)
        for (int i = 0; i < lpc; ++i) {
          const int pos = (jj * lpc + i) % nl;
          if (left(pos) < 1) throw ConfigError("cluster_equal: a class pool ran out before covering every holder");
          take(pos, jj, 1);
          --need[static_cast<std::size_t>(jj)];
        }
      // Neediest client first, drawing from its fullest held pool, keeps
      // every client fillable while pools drain unevenly.
      while (true) {
        int best = -1;
        for (int jj = 0; jj < members; ++jj)
          if (need[static_cast<std::size_t>(jj)] > 0 && (best < 0 || need[static_cast<std::size_t>(jj)] > need[static_cast<std::size_t>(best)]))
            best = jj;
        if (best < 0) break;
        int bp = -1;
        for (int i = 0; i < lpc; ++i) {
          const int pos = (best * lpc + i) % nl;
          if (left(pos) > 0 && (bp < 0 || left(pos) > left(bp))) bp = pos;
        }
        if (bp < 0) throw ConfigError("cluster_equal: class sizes too skewed to reach a common count");
        take(bp, best, 1);
        --need[static_cast<std::size_t>(best)];
      }
    } else if (members > 0) {
      for (int pos = 0; pos < nl; ++pos) {
        const auto& h = holders_of[j][static_cast<std::size_t>(pos)];
        if (h.empty()) continue;
        std::vector<double> w(h.size());
        for (std::size_t t = 0; t < h.size(); ++t)
          w[t] = weight[static_cast<std::size_t>(first_client[j] + h[t])];
        const auto share = largest_remainder(pool_size(j, pos), w, std::vector<long>(h.size(), 1));
        for (std::size_t t = 0; t < h.size(); ++t) take(pos, h[t], share[t]);
      }
    }

    for (int pos = 0; pos < nl; ++pos) {
      if (left(pos) == 0) continue;
      const auto& pool = pools[static_cast<std::size_t>(order[static_cast<std::size_t>(pos)])];
      m.unassigned.insert(m.unassigned.end(),
                          pool.begin() + static_cast<std::ptrdiff_t>(cursor[static_cast<std::size_t>(pos)]),
                          pool.end());
    }
  }
  sort_all(m);
  return m;
}

}  // namespace

std::string method_name(PartitionMethod m) {
  switch (m) {
    case PartitionMethod::Pareto: return "pareto";
    case PartitionMethod::ClusterEqual: return "cluster_equal";
    case PartitionMethod::ClusterNonequal: return "cluster_nonequal";
    case PartitionMethod::EqualShards: return "equal_shards";
    case PartitionMethod::NonequalShards: return "nonequal_shards";
  }
  throw ConfigError("unknown partition method");
}

PartitionMethod method_from_name(const std::string& s) {
  if (s == "pareto") return PartitionMethod::Pareto;
  if (s == "cluster_equal") return PartitionMethod::ClusterEqual;
  if (s == "cluster_nonequal") return PartitionMethod::ClusterNonequal;
  if (s == "equal_shards") return PartitionMethod::EqualShards;
  if (s == "nonequal_shards") return PartitionMethod::NonequalShards;
  throw ConfigError("unknown partition method: " + s);
}

void PartitionSpec::validate() const {
  if (num_clients < 1) throw ConfigError("partition: num_clients must be positive");
  if (labels_per_client < 1) throw ConfigError("partition: labels_per_client must be positive");
  if (delta <= 0.0 || delta > 1.0) throw ConfigError("partition: delta must be in (0, 1]");
  if (groups < 1) throw ConfigError("partition: groups must be positive");
  if (pareto_shape <= 0.0) throw ConfigError("partition: pareto_shape must be positive");
  if (min_per_client < 1) throw ConfigError("partition: min_per_client must be positive");
  if (quantity_low <= 0.0 || quantity_high < quantity_low)
    throw ConfigError("partition: need 0 < quantity_low <= quantity_high");
}

PartitionManifest make_partition(const Dataset& ds, const PartitionSpec& spec) {
  spec.validate();
  ds.validate();
  PartitionManifest m;
  switch (spec.method) {
    case PartitionMethod::Pareto:
      m = partition_pareto(ds, spec);
      break;
    case PartitionMethod::ClusterEqual:
    case PartitionMethod::ClusterNonequal:
      m = partition_clustered(ds, spec);
      break;
    case PartitionMethod::EqualShards:
    case PartitionMethod::NonequalShards:
      m = partition_shards(ds, spec);
      break;
  }
  m.validate();
  return m;
}

void PartitionManifest::validate() const {
  if (assignments.size() != static_cast<std::size_t>(spec.num_clients))
    throw ConfigError("manifest: client count mismatch");
  if (group_of.size() != assignments.size()) throw ConfigError("manifest: group list size mismatch");
  std::vector<char> seen(static_cast<std::size_t>(dataset_samples), 0);
  long covered = 0;
  auto mark = [&](int idx) {
    if (idx < 0 || idx >= dataset_samples) throw ConfigError("manifest: sample index out of range");
    if (seen[static_cast<std::size_t>(idx)]) throw ConfigError("manifest: sample assigned twice");
    seen[static_cast<std::size_t>(idx)] = 1;
    ++covered;
  };
  for (const auto& a : assignments) {
    if (a.empty()) throw ConfigError("manifest: client with an empty shard");
    if (!std::is_sorted(a.begin(), a.end())) throw ConfigError("manifest: client rows not sorted");
    for (int idx : a) mark(idx);
  }
  if (!std::is_sorted(unassigned.begin(), unassigned.end()))
    throw ConfigError("manifest: unassigned rows not sorted");
  for (int idx : unassigned) mark(idx);
  if (covered != dataset_samples) throw ConfigError("manifest: assignments do not cover the dataset");
}

PartitionStats partition_stats(const PartitionManifest& m, const Dataset& ds) {
  if (ds.sample_count() != m.dataset_samples || ds.class_count != m.dataset_classes)
    throw ConfigError("partition_stats: manifest does not match the dataset");
  PartitionStats s;
  const int n = m.num_clients();
  s.counts.resize(static_cast<std::size_t>(n));
  s.label_hist = Eigen::MatrixXi::Zero(n, ds.class_count);
  for (int k = 0; k < n; ++k) {
    const auto& a = m.assignments[static_cast<std::size_t>(k)];
    s.counts[static_cast<std::size_t>(k)] = static_cast<int>(a.size());
    s.total_assigned += static_cast<long>(a.size());
    for (int idx : a) s.label_hist(k, ds.labels[static_cast<std::size_t>(idx)]) += 1;
  }
  s.mean_per_client = static_cast<double>(s.total_assigned) / static_cast<double>(n);
  double acc = 0.0;
  for (int cnt : s.counts) {
    const double d = cnt - s.mean_per_client;
    acc += d * d;
  }
  s.std_per_client = std::sqrt(acc / static_cast<double>(n));
  return s;
}

void write_manifest(const PartitionManifest& m, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write manifest: " + path);
  const auto& sp = m.spec;
  f << "# feddrl-manifest v1\n";
  f << "# method=" << method_name(sp.method) << " clients=" << sp.num_clients << " seed=" << sp.seed
    << " labels_per_client=" << sp.labels_per_client << " delta=" << text::fmt_double(sp.delta)
    << " groups=" << sp.groups << " pareto_shape=" << text::fmt_double(sp.pareto_shape)
    << " min_per_client=" << sp.min_per_client
    << " quantity_low=" << text::fmt_double(sp.quantity_low)
    << " quantity_high=" << text::fmt_double(sp.quantity_high) << "\n";
  f << "# dataset=" << m.dataset_name << " samples=" << m.dataset_samples
    << " classes=" << m.dataset_classes << "\n";
  f << "# groups";
  for (std::size_t k = 0; k < m.group_of.size(); ++k) f << " " << k << ":" << m.group_of[k];
  f << "\n";
  for (int idx : m.unassigned) f << "-1\t" << idx << "\n";
  for (std::size_t k = 0; k < m.assignments.size(); ++k)
    for (int idx : m.assignments[k]) f << k << "\t" << idx << "\n";
  if (!f) throw std::runtime_error("manifest write failed: " + path);
}

PartitionManifest read_manifest(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ConfigError("cannot open manifest: " + path);
  std::string line;
  if (!std::getline(f, line) || line != "# feddrl-manifest v1")
    throw ConfigError("bad manifest header: " + path);

  PartitionManifest m;
  auto parse_kv = [&](const std::string& body, auto&& handle) {
    for (const auto& tok : text::split(body, ' ')) {
      if (tok.empty()) continue;
      const auto eq = tok.find('=');
      if (eq == std::string::npos) throw ConfigError("bad manifest header field: " + tok);
      handle(tok.substr(0, eq), tok.substr(eq + 1));
    }
  };

  if (!std::getline(f, line) || line.rfind("# method=", 0) != 0)
    throw ConfigError("manifest missing method line: " + path);
  parse_kv(line.substr(2), [&](const std::string& k, const std::string& v) {
    auto& sp = m.spec;
    if (k == "method") sp.method = method_from_name(v);
    else if (k == "clients") sp.num_clients = static_cast<int>(text::parse_int(v));
    else if (k == "seed") sp.seed = static_cast<std::uint64_t>(text::parse_int(v));
    else if (k == "labels_per_client") sp.labels_per_client = static_cast<int>(text::parse_int(v));
    else if (k == "delta") sp.delta = text::parse_double(v);
    else if (k == "groups") sp.groups = static_cast<int>(text::parse_int(v));
    else if (k == "pareto_shape") sp.pareto_shape = text::parse_double(v);
    else if (k == "min_per_client") sp.min_per_client = static_cast<int>(text::parse_int(v));
    else if (k == "quantity_low") sp.quantity_low = text::parse_double(v);
    else if (k == "quantity_high") sp.quantity_high = text::parse_double(v);
    else throw ConfigError("unknown manifest field: " + k);
  });

  if (!std::getline(f, line) || line.rfind("# dataset=", 0) != 0)
    throw ConfigError("manifest missing dataset line: " + path);
  parse_kv(line.substr(2), [&](const std::string& k, const std::string& v) {
    if (k == "dataset") m.dataset_name = v;
    else if (k == "samples") m.dataset_samples = text::parse_int(v);
    else if (k == "classes") m.dataset_classes = static_cast<int>(text::parse_int(v));
    else throw ConfigError("unknown manifest field: " + k);
  });

  if (!std::getline(f, line) || line.rfind("# groups", 0) != 0)
    throw ConfigError("manifest missing groups line: " + path);
  m.group_of.assign(static_cast<std::size_t>(m.spec.num_clients), -1);
  {
    std::istringstream is(line.substr(8));
    std::string tok;
    while (is >> tok) {
      const auto colon = tok.find(':');
      if (colon == std::string::npos) throw ConfigError("bad groups entry: " + tok);
      const auto k = text::parse_int(tok.substr(0, colon));
      if (k < 0 || k >= m.spec.num_clients) throw ConfigError("groups entry out of range: " + tok);
      m.group_of[static_cast<std::size_t>(k)] = static_cast<int>(text::parse_int(tok.substr(colon + 1)));
    }
  }

  m.assignments.assign(static_cast<std::size_t>(m.spec.num_clients), {});
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) throw ConfigError("bad manifest row: " + line);
    const auto client = text::parse_int(line.substr(0, tab));
    const auto idx = static_cast<int>(text::parse_int(line.substr(tab + 1)));
    if (client == -1) {
      m.unassigned.push_back(idx);
    } else {
      if (client < 0 || client >= m.spec.num_clients)
        throw ConfigError("manifest row client out of range: " + line);
      m.assignments[static_cast<std::size_t>(client)].push_back(idx);
    }
  }
  m.validate();
  return m;
}

void write_stats_csv(const PartitionStats& s, const PartitionManifest& m, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write stats: " + path);
  f << "# total=" << s.total_assigned << " mean=" << text::fmt_double(s.mean_per_client)
    << " std=" << text::fmt_double(s.std_per_client) << "\n";
  f << "client_id,group_id,samples";
  for (Eigen::Index c = 0; c < s.label_hist.cols(); ++c) f << ",label_" << c;
  f << "\n";
  for (int k = 0; k < m.num_clients(); ++k) {
    f << k << "," << m.group_of[static_cast<std::size_t>(k)] << ","
      << s.counts[static_cast<std::size_t>(k)];
    for (Eigen::Index c = 0; c < s.label_hist.cols(); ++c) f << "," << s.label_hist(k, c);
    f << "\n";
  }
  if (!f) throw std::runtime_error("stats write failed: " + path);
}

}  // namespace feddrl
