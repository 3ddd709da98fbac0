#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

#include "feddrl/dataset.hpp"

namespace feddrl {

// Five non-IID splits of a labeled dataset across clients.
//
//   Pareto            every client holds labels_per_client labels; per-label
//                     sample shares follow per-client Pareto weights.
//   ClusterEqual      clients form groups (round(delta*N) in the main group),
//                     each group owns a disjoint label cluster, every client
//                     ends up with the same sample count.
//   ClusterNonequal   same grouping, per-client counts follow log-uniform
//                     weights over each group's supply.
//   EqualShards       data sorted by label, cut into 2N shards, two per client.
//   NonequalShards    data sorted by label, cut into 10N shards, clients
//                     receive between 6 and 14 shards each.
enum class PartitionMethod { Pareto, ClusterEqual, ClusterNonequal, EqualShards, NonequalShards };

std::string method_name(PartitionMethod m);
PartitionMethod method_from_name(const std::string& s);

// Seed path tags (rng::derive(seed, {tag, ...})) are part of the manifest
// format contract: the same spec and seed must reproduce the same manifest
// across versions.
namespace partition_seed {
inline constexpr std::uint64_t kPool = 1;     // per-class sample shuffles ({kPool, class})
inline constexpr std::uint64_t kCluster = 2;  // per-group label shuffles ({kCluster, group})
inline constexpr std::uint64_t kOrder = 3;    // Pareto class order
inline constexpr std::uint64_t kWeight = 4;   // Pareto per-client weights
inline constexpr std::uint64_t kShard = 5;    // shard deal order
inline constexpr std::uint64_t kCount = 6;    // per-client quantity draws
}  // namespace partition_seed

struct PartitionSpec {
  PartitionMethod method = PartitionMethod::Pareto;
  int num_clients = 10;
  std::uint64_t seed = 0;
  int labels_per_client = 2;   // Pareto and cluster methods
  double delta = 0.6;          // main group fraction, cluster methods
  int groups = 3;              // total group count, cluster methods
  double pareto_shape = 1.5;
  int min_per_client = 10;     // Pareto floor
  double quantity_low = 0.3;   // ClusterNonequal weight range
  double quantity_high = 3.0;

  void validate() const;
};

struct PartitionManifest {
  PartitionSpec spec;
  std::string dataset_name;
  Eigen::Index dataset_samples = 0;
  int dataset_classes = 0;
  std::vector<std::vector<int>> assignments;  // per client, ascending sample indices
  std::vector<int> group_of;                  // per client; -1 when grouping does not apply
  std::vector<int> unassigned;                // ascending sample indices left out

  int num_clients() const { return static_cast<int>(assignments.size()); }
  // Structural checks: index ranges, disjointness, full coverage by
  // assignments plus unassigned, and no empty client shard.
  void validate() const;
};

PartitionManifest make_partition(const Dataset& ds, const PartitionSpec& spec);

struct PartitionStats {
  long total_assigned = 0;
  double mean_per_client = 0.0;
  double std_per_client = 0.0;  // population
  std::vector<int> counts;
  Eigen::MatrixXi label_hist;   // clients x classes
};

PartitionStats partition_stats(const PartitionManifest& m, const Dataset& ds);

// Tab-separated manifest with a comment header. Unassigned samples are rows
// with client id -1. write(read(x)) reproduces x byte for byte.
void write_manifest(const PartitionManifest& m, const std::string& path);
PartitionManifest read_manifest(const std::string& path);

void write_stats_csv(const PartitionStats& s, const PartitionManifest& m, const std::string& path);

}  // namespace feddrl
