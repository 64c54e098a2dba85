#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "multimage/fusion.hpp"

namespace multimage {

// min_samples counts the point itself, so min_samples = 1 makes every core
// distance zero and HDBSCAN degenerates to plain single linkage.
struct ClusterParams {
  std::size_t min_cluster_size = 8;
  std::size_t min_samples = 5;
  double dbscan_eps = 0.5;
};

// Throws ConfigError when the parameters violate their invariants.
void validate(const ClusterParams& params, bool needs_eps);

inline constexpr int kNoise = -1;

// labels[i] belongs to ids[i]. Cluster labels are 0..num_clusters-1, numbered
// by the input position of each cluster's first member.
struct ClusterAssignment {
  std::vector<std::string> ids;
  std::vector<int> labels;

  int num_clusters() const;
  // Member ids per label, each in input order.
  std::vector<std::vector<std::string>> clusters() const;
};

// DBSCAN with closed eps-balls. Clusters are expanded in input order, so a
// border point reachable from several clusters joins the lowest label.
// Clusters smaller than min_cluster_size are demoted to noise.
ClusterAssignment dbscan_cluster(const std::vector<FusedEmbedding>& points, const ClusterParams& params);

// HDBSCAN with excess-of-mass selection. When fewer than min_cluster_size
// points are given every point is noise.
ClusterAssignment hdbscan_cluster(const std::vector<FusedEmbedding>& points, const ClusterParams& params);

struct ClusterSummary {
  std::size_t points = 0;
  std::size_t clusters = 0;
  std::vector<std::size_t> sizes;  // descending
  std::size_t noise = 0;
  double noise_fraction = 0.0;

  json to_json() const;
};

ClusterSummary cluster_summary(const ClusterAssignment& assignment);

// Assignment files: {"id", "label"} per line.
ClusterAssignment read_assignment(const std::filesystem::path& path);
void write_assignment(const ClusterAssignment& assignment, const std::filesystem::path& path);

// The individual HDBSCAN stages, exposed for inspection and testing.
namespace hdbscan {

// Distance from each point to its min_samples-th nearest neighbour, counting
// the point itself as the first.
std::vector<double> core_distances(const PointMatrix& points, std::size_t min_samples);

double mutual_reachability(const PointMatrix& points, const std::vector<double>& core, std::size_t a,
                           std::size_t b);

struct Edge {
  std::size_t a = 0;
  std::size_t b = 0;
  double weight = 0.0;
};

// Prim's algorithm on the dense mutual-reachability graph, starting from
// point 0; ties go to the lowest index. Returns n - 1 edges in insertion order.
std::vector<Edge> minimum_spanning_tree(const PointMatrix& points, const std::vector<double>& core);

// One merge of the single-linkage dendrogram. Nodes below n are points; the
// i-th merge creates node n + i.
struct Merge {
  std::size_t left = 0;
  std::size_t right = 0;
  double distance = 0.0;
  std::size_t size = 0;
};

std::vector<Merge> single_linkage(std::size_t n, std::vector<Edge> mst);

// Condensed tree row. Points keep their index; clusters are numbered from n
// with the root at n. lambda = 1 / distance (infinite for distance 0).
struct CondensedRow {
  std::size_t parent = 0;
  std::size_t child = 0;
  double lambda = 0.0;
  std::size_t child_size = 0;
};

std::vector<CondensedRow> condense_tree(const std::vector<Merge>& hierarchy, std::size_t n,
                                        std::size_t min_cluster_size);

// Excess-of-mass extraction over the condensed tree; returns a label per
// point (kNoise for unclaimed points), numbered by first appearance.
std::vector<int> extract_clusters(const std::vector<CondensedRow>& tree, std::size_t n,
                                  std::size_t min_cluster_size);

}  // namespace hdbscan

}  // namespace multimage
