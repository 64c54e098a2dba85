#include "multimage/clustering.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>
#include <map>
#include <numeric>
#include <unordered_set>

#include "multimage/error.hpp"
#include "multimage/log.hpp"

namespace multimage {

void validate(const ClusterParams& params, bool needs_eps) {
  if (params.min_cluster_size < 2) throw ConfigError("min_cluster_size must be at least 2");
  if (params.min_samples < 1) throw ConfigError("min_samples must be at least 1");
  if (params.min_samples > params.min_cluster_size) {
    throw ConfigError("min_samples must not exceed min_cluster_size");
  }
  if (needs_eps && !(params.dbscan_eps > 0.0)) throw ConfigError("dbscan eps must be positive");
}

int ClusterAssignment::num_clusters() const {
  int top = kNoise;
  for (int l : labels) top = std::max(top, l);
  return top + 1;
}

std::vector<std::vector<std::string>> ClusterAssignment::clusters() const {
  std::vector<std::vector<std::string>> out(static_cast<std::size_t>(num_clusters()));
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] != kNoise) out[static_cast<std::size_t>(labels[i])].push_back(ids[i]);
  }
  return out;
}

namespace {

// Renumbers labels by first appearance; negative labels are noise.
std::vector<int> canonical_labels(const std::vector<long>& raw) {
  std::map<long, int> remap;
  std::vector<int> out(raw.size(), kNoise);
  for (std::size_t i = 0; i < raw.size(); ++i) {
    if (raw[i] < 0) continue;
    auto [it, inserted] = remap.emplace(raw[i], static_cast<int>(remap.size()));
    out[i] = it->second;
  }
  return out;
}

std::vector<std::string> ids_of(const std::vector<FusedEmbedding>& points) {
  std::vector<std::string> ids;
  ids.reserve(points.size());
  for (const auto& p : points) ids.push_back(p.id);
  return ids;
}

}  // namespace

ClusterAssignment dbscan_cluster(const std::vector<FusedEmbedding>& points, const ClusterParams& params) {
  validate(params, true);
  if (points.empty()) throw DomainError("dbscan needs at least one point");
  const auto m = PointMatrix::from(points);
  const std::size_t n = m.n;

  std::vector<std::vector<std::size_t>> neighbours(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (m.distance(i, j) <= params.dbscan_eps) neighbours[i].push_back(j);
    }
  }
  std::vector<bool> core(n);
  for (std::size_t i = 0; i < n; ++i) core[i] = neighbours[i].size() >= params.min_samples;

  std::vector<long> raw(n, kNoise);
  long next = 0;
  for (std::size_t seed = 0; seed < n; ++seed) {
    if (!core[seed] || raw[seed] != kNoise) continue;
    const long label = next++;
    std::deque<std::size_t> frontier{seed};
    raw[seed] = label;
    while (!frontier.empty()) {
      const std::size_t p = frontier.front();
      frontier.pop_front();
      if (!core[p]) continue;
      for (std::size_t q : neighbours[p]) {
        if (raw[q] != kNoise) continue;
        raw[q] = label;
        frontier.push_back(q);
      }
    }
  }

  std::map<long, std::size_t> sizes;
  for (long l : raw) {
    if (l >= 0) ++sizes[l];
  }
  for (auto& l : raw) {
    if (l >= 0 && sizes[l] < params.min_cluster_size) l = kNoise;
  }
  return {ids_of(points), canonical_labels(raw)};
}

ClusterAssignment hdbscan_cluster(const std::vector<FusedEmbedding>& points, const ClusterParams& params) {
  validate(params, false);
  ClusterAssignment out{ids_of(points), std::vector<int>(points.size(), kNoise)};
  if (points.size() < params.min_cluster_size) {
    log::warn("hdbscan: {} points is fewer than min_cluster_size={}; everything is noise", points.size(),
              params.min_cluster_size);
    return out;
  }
  const auto m = PointMatrix::from(points);
  const auto core = hdbscan::core_distances(m, params.min_samples);
  auto mst = hdbscan::minimum_spanning_tree(m, core);
  const auto hierarchy = hdbscan::single_linkage(m.n, std::move(mst));
  const auto tree = hdbscan::condense_tree(hierarchy, m.n, params.min_cluster_size);
  out.labels = hdbscan::extract_clusters(tree, m.n, params.min_cluster_size);
  return out;
}

json ClusterSummary::to_json() const {
  return {{"points", points},
          {"clusters", clusters},
          {"sizes", sizes},
          {"noise", noise},
          {"noise_fraction", noise_fraction}};
}

ClusterSummary cluster_summary(const ClusterAssignment& assignment) {
  ClusterSummary s;
  s.points = assignment.labels.size();
  for (const auto& c : assignment.clusters()) s.sizes.push_back(c.size());
  std::sort(s.sizes.begin(), s.sizes.end(), std::greater<>());
  s.clusters = s.sizes.size();
  s.noise = static_cast<std::size_t>(std::count(assignment.labels.begin(), assignment.labels.end(), kNoise));
  s.noise_fraction = s.points ? static_cast<double>(s.noise) / static_cast<double>(s.points) : 0.0;
  return s;
}

ClusterAssignment read_assignment(const std::filesystem::path& path) {
  ClusterAssignment a;
  std::unordered_set<std::string> seen;
  read_jsonl(path, [&](const json& r, std::size_t line) {
    auto id = require_string(r, "id", line);
    const auto& label = require_field(r, "label", line);
    if (!label.is_number_integer()) throw ParseError("label must be an integer", line);
    const int l = label.get<int>();
    if (l < kNoise) throw ParseError("label must be >= -1", line);
    if (!seen.insert(id).second) throw ValidationError("duplicate id \"" + id + "\"", {id});
    a.ids.push_back(std::move(id));
    a.labels.push_back(l);
  });
  return a;
}

void write_assignment(const ClusterAssignment& assignment, const std::filesystem::path& path) {
  std::vector<json> lines;
  lines.reserve(assignment.ids.size());
  for (std::size_t i = 0; i < assignment.ids.size(); ++i) {
    lines.push_back({{"id", assignment.ids[i]}, {"label", assignment.labels[i]}});
  }
  write_jsonl(path, lines);
}

namespace hdbscan {

std::vector<double> core_distances(const PointMatrix& points, std::size_t min_samples) {
  if (min_samples < 1 || min_samples > points.n) {
    throw DomainError("min_samples must be in [1, n] for core distances");
  }
  std::vector<double> core(points.n);
  std::vector<double> row(points.n);
  for (std::size_t i = 0; i < points.n; ++i) {
    for (std::size_t j = 0; j < points.n; ++j) row[j] = i == j ? 0.0 : points.distance(i, j);
    auto kth = row.begin() + static_cast<std::ptrdiff_t>(min_samples - 1);
    std::nth_element(row.begin(), kth, row.end());
    core[i] = *kth;
  }
  return core;
}

double mutual_reachability(const PointMatrix& points, const std::vector<double>& core, std::size_t a,
                           std::size_t b) {
  return std::max({core[a], core[b], points.distance(a, b)});
}

std::vector<Edge> minimum_spanning_tree(const PointMatrix& points, const std::vector<double>& core) {
  const std::size_t n = points.n;
  std::vector<Edge> edges;
  if (n < 2) return edges;
  edges.reserve(n - 1);
  constexpr double kInf = std::numeric_limits<double>::infinity();
  std::vector<bool> in_tree(n, false);
  std::vector<double> best(n, kInf);
  std::vector<std::size_t> parent(n, 0);
  std::size_t current = 0;
  in_tree[0] = true;
  for (std::size_t step = 1; step < n; ++step) {
    std::size_t next = n;
    for (std::size_t j = 0; j < n; ++j) {
      if (in_tree[j]) continue;
      const double w = mutual_reachability(points, core, current, j);
      if (w < best[j]) {
        best[j] = w;
        parent[j] = current;
      }
      if (next == n || best[j] < best[next]) next = j;
    }
    in_tree[next] = true;
    edges.push_back({parent[next], next, best[next]});
    current = next;
  }
  return edges;
}

std::vector<Merge> single_linkage(std::size_t n, std::vector<Edge> mst) {
  std::stable_sort(mst.begin(), mst.end(), [](const Edge& x, const Edge& y) { return x.weight < y.weight; });
  const std::size_t nodes = n == 0 ? 0 : 2 * n - 1;
  std::vector<std::size_t> parent(nodes);
  std::iota(parent.begin(), parent.end(), std::size_t{0});
  std::vector<std::size_t> size(nodes, 1);
  auto find = [&](std::size_t x) {
    std::size_t root = x;
    while (parent[root] != root) root = parent[root];
    while (parent[x] != root) {
      const std::size_t up = parent[x];
      parent[x] = root;
      x = up;
    }
    return root;
  };
  std::vector<Merge> out;
  out.reserve(mst.size());
  std::size_t next = n;
  for (const auto& e : mst) {
    const std::size_t ra = find(e.a);
    const std::size_t rb = find(e.b);
    size[next] = size[ra] + size[rb];
    out.push_back({ra, rb, e.weight, size[next]});
    parent[ra] = next;
    parent[rb] = next;
    ++next;
  }
  return out;
}

namespace {

double lambda_of(double distance) {
  return distance > 0.0 ? 1.0 / distance : std::numeric_limits<double>::infinity();
}

std::vector<std::size_t> subtree(const std::vector<Merge>& hierarchy, std::size_t n, std::size_t node) {
  std::vector<std::size_t> out{node};
  for (std::size_t i = 0; i < out.size(); ++i) {
    const std::size_t v = out[i];
    if (v >= n) {
      const auto& m = hierarchy[v - n];
      out.push_back(m.left);
      out.push_back(m.right);
    }
  }
  return out;
}

}  // namespace

std::vector<CondensedRow> condense_tree(const std::vector<Merge>& hierarchy, std::size_t n,
                                        std::size_t min_cluster_size) {
  std::vector<CondensedRow> rows;
  if (n < 2) return rows;
  const std::size_t root = 2 * n - 2;
  auto node_size = [&](std::size_t v) { return v < n ? std::size_t{1} : hierarchy[v - n].size; };

  std::vector<std::size_t> relabel(root + 1, 0);
  std::vector<bool> ignore(root + 1, false);
  relabel[root] = n;
  std::size_t next_label = n + 1;

  auto fall_out = [&](std::size_t cluster, std::size_t node, double lambda) {
    for (std::size_t v : subtree(hierarchy, n, node)) {
      if (v < n) rows.push_back({cluster, v, lambda, 1});
      ignore[v] = true;
    }
  };

  for (std::size_t node : subtree(hierarchy, n, root)) {
    if (ignore[node] || node < n) continue;
    const auto& m = hierarchy[node - n];
    const double lambda = lambda_of(m.distance);
    const std::size_t left_size = node_size(m.left);
    const std::size_t right_size = node_size(m.right);
    const std::size_t here = relabel[node];
    if (left_size >= min_cluster_size && right_size >= min_cluster_size) {
      relabel[m.left] = next_label++;
      rows.push_back({here, relabel[m.left], lambda, left_size});
      relabel[m.right] = next_label++;
      rows.push_back({here, relabel[m.right], lambda, right_size});
    } else if (left_size < min_cluster_size && right_size < min_cluster_size) {
      fall_out(here, m.left, lambda);
      fall_out(here, m.right, lambda);
    } else if (left_size < min_cluster_size) {
      relabel[m.right] = here;
      fall_out(here, m.left, lambda);
    } else {
      relabel[m.left] = here;
      fall_out(here, m.right, lambda);
    }
  }
  return rows;
}

std::vector<int> extract_clusters(const std::vector<CondensedRow>& tree, std::size_t n,
                                  std::size_t min_cluster_size) {
  std::vector<long> raw(n, kNoise);
  if (tree.empty()) return canonical_labels(raw);
  const std::size_t root = n;
  std::size_t max_cluster = root;
  for (const auto& r : tree) max_cluster = std::max(max_cluster, r.parent);
  for (const auto& r : tree) {
    if (r.child_size > 1) max_cluster = std::max(max_cluster, r.child);
  }
  const std::size_t clusters = max_cluster - root + 1;
  auto slot = [&](std::size_t c) { return c - root; };

  std::vector<double> birth(clusters, 0.0);
  std::vector<std::size_t> cluster_parent(clusters, root);
  std::vector<std::vector<std::size_t>> children(clusters);
  for (const auto& r : tree) {
    if (r.child_size > 1) {
      birth[slot(r.child)] = r.lambda;
      cluster_parent[slot(r.child)] = r.parent;
      children[slot(r.parent)].push_back(r.child);
    }
  }

  std::vector<double> stability(clusters, 0.0);
  for (const auto& r : tree) {
    const double b = birth[slot(r.parent)];
    if (r.lambda == b) continue;  // also covers infinity at both ends
    stability[slot(r.parent)] += (r.lambda - b) * static_cast<double>(r.child_size);
  }

  // Children always carry larger labels than their parent, so a descending
  // sweep visits every subtree before its root. The root is never selected.
  std::vector<bool> selected(clusters, false);
  for (std::size_t c = max_cluster; c > root; --c) {
    double subtree_stability = 0.0;
    for (std::size_t child : children[slot(c)]) subtree_stability += stability[slot(child)];
    if (!children[slot(c)].empty() && subtree_stability > stability[slot(c)]) {
      stability[slot(c)] = subtree_stability;
    } else {
      selected[slot(c)] = true;
      std::vector<std::size_t> stack(children[slot(c)]);
      while (!stack.empty()) {
        const std::size_t v = stack.back();
        stack.pop_back();
        selected[slot(v)] = false;
        stack.insert(stack.end(), children[slot(v)].begin(), children[slot(v)].end());
      }
    }
  }

  const bool any_selected = std::find(selected.begin(), selected.end(), true) != selected.end();
  if (!any_selected) {
    // The root never split into two clusters. Points that leave it only at
    // infinite density (zero mutual-reachability distance) still form a
    // cluster when there are enough of them.
    std::vector<std::size_t> dense;
    for (const auto& r : tree) {
      if (r.child < n && r.parent == root && std::isinf(r.lambda)) dense.push_back(r.child);
    }
    if (dense.size() >= min_cluster_size) {
      for (std::size_t p : dense) raw[p] = 0;
    }
    return canonical_labels(raw);
  }

  for (const auto& r : tree) {
    if (r.child >= n) continue;
    std::size_t c = r.parent;
    while (c != root && !selected[slot(c)]) c = cluster_parent[slot(c)];
    if (c != root) raw[r.child] = static_cast<long>(c);
  }
  return canonical_labels(raw);
}

}  // namespace hdbscan

}  // namespace multimage
