#pragma once

// Independent reference computations used by the unit and acceptance suites.
// Nothing here calls into the library under test except plain data types.

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <set>
#include <string>
#include <vector>

#include "multimage/rng.hpp"

namespace multimage::testing {

inline double normal(Rng& rng) {
  // Box-Muller; u1 is kept away from 0.
  const double u1 = 1.0 - rng.uniform();
  const double u2 = rng.uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

inline double euclid(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(s);
}

// Core distance: sort all distances from i (including the zero to itself) and
// take the min_samples-th.
inline std::vector<double> oracle_core(const std::vector<std::vector<double>>& pts, std::size_t min_samples) {
  std::vector<double> core;
  for (const auto& p : pts) {
    std::vector<double> d;
    for (const auto& q : pts) d.push_back(euclid(p, q));
    std::sort(d.begin(), d.end());
    core.push_back(d[std::min(min_samples, d.size()) - 1]);
  }
  return core;
}

// Kruskal over every pair with union-find; returns the chosen edge weights in
// ascending order. Every minimum spanning tree has this same weight multiset.
inline std::vector<double> oracle_mst_weights(const std::vector<std::vector<double>>& pts, std::size_t min_samples) {
  const auto core = oracle_core(pts, min_samples);
  struct E {
    double w;
    std::size_t a, b;
  };
  std::vector<E> edges;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    for (std::size_t j = i + 1; j < pts.size(); ++j) {
      edges.push_back({std::max({core[i], core[j], euclid(pts[i], pts[j])}), i, j});
    }
  }
  std::sort(edges.begin(), edges.end(), [](const E& x, const E& y) { return x.w < y.w; });
  std::vector<std::size_t> parent(pts.size());
  std::iota(parent.begin(), parent.end(), 0);
  auto find = [&](std::size_t x) {
    while (parent[x] != x) x = parent[x] = parent[parent[x]];
    return x;
  };
  std::vector<double> chosen;
  for (const auto& e : edges) {
    const auto ra = find(e.a), rb = find(e.b);
    if (ra == rb) continue;
    parent[ra] = rb;
    chosen.push_back(e.w);
  }
  return chosen;
}

inline double oracle_mst_weight(const std::vector<std::vector<double>>& pts, std::size_t min_samples) {
  const auto w = oracle_mst_weights(pts, min_samples);
  return std::accumulate(w.begin(), w.end(), 0.0);
}

// Adjusted Rand index between two labelings; noise (-1) is treated as its own
// label value like any other.
inline double adjusted_rand_index(const std::vector<int>& a, const std::vector<int>& b) {
  std::map<std::pair<int, int>, double> table;
  std::map<int, double> rows, cols;
  for (std::size_t i = 0; i < a.size(); ++i) {
    table[{a[i], b[i]}] += 1;
    rows[a[i]] += 1;
    cols[b[i]] += 1;
  }
  auto c2 = [](double x) { return x * (x - 1) / 2; };
  double index = 0, sa = 0, sb = 0;
  for (const auto& [k, v] : table) index += c2(v);
  for (const auto& [k, v] : rows) sa += c2(v);
  for (const auto& [k, v] : cols) sb += c2(v);
  const double expected = sa * sb / c2(static_cast<double>(a.size()));
  const double max_index = (sa + sb) / 2;
  if (max_index == expected) return 1.0;
  return (index - expected) / (max_index - expected);
}

// A clustering as a set of member sets, independent of label numbering.
inline std::set<std::set<std::string>> partition_of(const std::vector<std::string>& ids, const std::vector<int>& labels) {
  std::map<int, std::set<std::string>> by;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (labels[i] >= 0) by[labels[i]].insert(ids[i]);
  }
  std::set<std::set<std::string>> out;
  for (auto& [k, v] : by) out.insert(v);
  return out;
}

// Literal transcription of greedy cluster matching: sort both lists by size
// (largest first, stable), then repeatedly take the larger of the two heads,
// scan the other list for the best overlap score, emit the union and drop
// both clusters.
struct OracleMatch {
  std::vector<std::set<int>> unions;
  std::size_t total = 0;
};

inline double oracle_score(const std::set<int>& a, const std::set<int>& b) {
  std::size_t inter = 0;
  for (int x : a) inter += b.count(x);
  return static_cast<double>(inter) / ((static_cast<double>(a.size()) + static_cast<double>(b.size())) / 2.0);
}

inline OracleMatch oracle_greedy_match(std::vector<std::set<int>> c1, std::vector<std::set<int>> c2) {
  auto by_size = [](const std::set<int>& x, const std::set<int>& y) { return x.size() > y.size(); };
  std::stable_sort(c1.begin(), c1.end(), by_size);
  std::stable_sort(c2.begin(), c2.end(), by_size);
  OracleMatch out;
  while (!c1.empty() && !c2.empty()) {
    const bool from_first = c1.front().size() >= c2.front().size();
    auto& src = from_first ? c1 : c2;
    auto& other = from_first ? c2 : c1;
    const std::set<int> cluster = src.front();
    src.erase(src.begin());
    std::size_t best = 0;
    double best_score = -1;
    for (std::size_t j = 0; j < other.size(); ++j) {
      const double s = oracle_score(cluster, other[j]);
      if (s > best_score) {
        best_score = s;
        best = j;
      }
    }
    std::set<int> u = cluster;
    u.insert(other[best].begin(), other[best].end());
    other.erase(other.begin() + static_cast<std::ptrdiff_t>(best));
    out.total += u.size();
    out.unions.push_back(std::move(u));
  }
  return out;
}

}  // namespace multimage::testing
