#include "multimage/grouping.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <unordered_map>
#include <unordered_set>

#include <fmt/core.h>

#include "multimage/error.hpp"
#include "multimage/log.hpp"

namespace multimage {

double match_score(const IdSet& a, const IdSet& b) {
  if (a.empty() || b.empty()) throw DomainError("match score of an empty cluster");
  const std::unordered_set<std::string> lookup(a.begin(), a.end());
  std::size_t overlap = 0;
  for (const auto& id : std::unordered_set<std::string>(b.begin(), b.end())) overlap += lookup.count(id);
  const double avg_size = (static_cast<double>(lookup.size()) +
                           static_cast<double>(std::unordered_set<std::string>(b.begin(), b.end()).size())) /
                          2.0;
  return static_cast<double>(overlap) / avg_size;
}

MatchResult greedy_cluster_match(std::vector<IdSet> c1, std::vector<IdSet> c2) {
  auto by_size = [](const IdSet& x, const IdSet& y) { return x.size() > y.size(); };
  std::stable_sort(c1.begin(), c1.end(), by_size);
  std::stable_sort(c2.begin(), c2.end(), by_size);

  MatchResult result;
  while (!c1.empty() && !c2.empty()) {
    const bool first_larger = c1.front().size() >= c2.front().size();
    auto& source = first_larger ? c1 : c2;
    auto& other = first_larger ? c2 : c1;
    IdSet larger = std::move(source.front());
    source.erase(source.begin());

    std::size_t best = other.size();
    double best_score = -1.0;
    for (std::size_t i = 0; i < other.size(); ++i) {
      const double s = match_score(larger, other[i]);
      if (s > best_score) {
        best_score = s;
        best = i;
      }
    }
    if (best == other.size()) continue;

    MatchedPair pair;
    pair.score = best_score;
    pair.source_sizes = {larger.size(), other[best].size()};
    std::unordered_set<std::string> seen;
    for (const auto* part : {&larger, &other[best]}) {
      for (const auto& id : *part) {
        if (seen.insert(id).second) pair.union_ids.push_back(id);
      }
    }
    result.total_samples += pair.union_ids.size();
    result.pairs.push_back(std::move(pair));
    other.erase(other.begin() + static_cast<std::ptrdiff_t>(best));
  }
  return result;
}

double ipow(double base, int exponent) {
  double result = 1.0;
  double factor = base;
  for (unsigned e = static_cast<unsigned>(exponent); e != 0; e >>= 1) {
    if (e & 1U) result *= factor;
    factor *= factor;
  }
  return result;
}

namespace {

void check_sampling_parameters(int k, double epsilon) {
  if (k < 1) throw DomainError("distance exponent k must be >= 1");
  if (!(epsilon > 0.0)) throw DomainError("epsilon must be > 0");
}

// Normalised inverse-distance weights; candidates whose sums overflowed get
// zero weight. If every weight underflows the nearest candidate takes all mass.
std::vector<double> normalise(const std::vector<double>& sums, double epsilon) {
  std::vector<double> w(sums.size());
  double total = 0.0;
  for (std::size_t j = 0; j < sums.size(); ++j) {
    w[j] = 1.0 / (sums[j] + epsilon);
    total += w[j];
  }
  if (!(total > 0.0) || !std::isfinite(total)) {
    const auto nearest = static_cast<std::size_t>(std::min_element(sums.begin(), sums.end()) - sums.begin());
    std::fill(w.begin(), w.end(), 0.0);
    w[nearest] = 1.0;
    return w;
  }
  for (auto& x : w) x /= total;
  return w;
}

}  // namespace

std::vector<double> sampling_distribution(const std::vector<FusedEmbedding>& candidates,
                                          const std::vector<FusedEmbedding>& selected, int k,
                                          double epsilon) {
  check_sampling_parameters(k, epsilon);
  if (candidates.empty()) throw DomainError("sampling distribution over an empty candidate set");
  if (selected.empty()) throw DomainError("sampling distribution needs at least one selected point");
  std::vector<double> sums(candidates.size(), 0.0);
  for (std::size_t j = 0; j < candidates.size(); ++j) {
    for (const auto& u : selected) sums[j] += ipow(pairwise_distance(candidates[j], u), k);
  }
  return normalise(sums, epsilon);
}

std::string to_string(GroupMethod method) { return method == GroupMethod::kRsi ? "rsi" : "gcma"; }

GroupMethod group_method_from_string(const std::string& s) {
  if (s == "rsi") return GroupMethod::kRsi;
  if (s == "gcma") return GroupMethod::kGcma;
  throw ParseError("unknown group method \"" + s + "\"");
}

IterativeSampler::IterativeSampler(const PointMatrix& points, int k, double epsilon, SamplingVariant variant)
    : points_(points), k_(k), epsilon_(epsilon), variant_(variant) {
  check_sampling_parameters(k, epsilon);
}

std::size_t IterativeSampler::pick(const std::vector<std::size_t>& candidates, const std::vector<double>& sums,
                                   Rng& rng) const {
  if (variant_ == SamplingVariant::kFarthest) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < sums.size(); ++j) {
      if (sums[j] > sums[best]) best = j;
    }
    return best;
  }
  const auto p = normalise(sums, epsilon_);
  const double u = rng.uniform();
  double cumulative = 0.0;
  std::size_t last_positive = 0;
  for (std::size_t j = 0; j < p.size(); ++j) {
    if (p[j] <= 0.0) continue;
    last_positive = j;
    cumulative += p[j];
    if (u < cumulative) return j;
  }
  (void)candidates;
  return last_positive;  // u landed in the rounding slack above the final sum
}

std::size_t IterativeSampler::draw_next(const std::vector<std::size_t>& candidates,
                                        const std::vector<std::size_t>& selected, Rng& rng) const {
  if (candidates.empty()) throw DomainError("no candidates left to draw from");
  if (selected.empty()) return candidates[rng.below(candidates.size())];
  std::vector<double> sums(candidates.size(), 0.0);
  for (std::size_t j = 0; j < candidates.size(); ++j) {
    for (std::size_t u : selected) sums[j] += ipow(points_.distance(candidates[j], u), k_);
  }
  return candidates[pick(candidates, sums, rng)];
}

std::vector<std::size_t> IterativeSampler::draw(const std::vector<std::size_t>& available, std::size_t size,
                                                Rng& rng) const {
  if (size > available.size()) {
    throw DomainError("cannot draw " + std::to_string(size) + " members from a pool of " +
                      std::to_string(available.size()));
  }
  std::vector<std::size_t> selected;
  if (size == 0) return selected;
  std::vector<std::size_t> candidates = available;
  std::vector<double> sums(candidates.size(), 0.0);

  std::size_t chosen = static_cast<std::size_t>(rng.below(candidates.size()));
  for (;;) {
    const std::size_t point = candidates[chosen];
    selected.push_back(point);
    candidates.erase(candidates.begin() + static_cast<std::ptrdiff_t>(chosen));
    sums.erase(sums.begin() + static_cast<std::ptrdiff_t>(chosen));
    if (selected.size() == size) break;
    for (std::size_t j = 0; j < candidates.size(); ++j) {
      sums[j] += ipow(points_.distance(candidates[j], point), k_);
    }
    chosen = pick(candidates, sums, rng);
  }
  return selected;
}

ImageGroup random_sample_iteration(const std::vector<FusedEmbedding>& pool, std::size_t n, int k,
                                   double epsilon, std::uint64_t seed, std::string group_id,
                                   SamplingVariant variant) {
  if (n > pool.size()) {
    throw DomainError("group size " + std::to_string(n) + " exceeds pool size " + std::to_string(pool.size()));
  }
  if (n < 2) throw DomainError("a group needs at least 2 members");
  const auto matrix = PointMatrix::from(pool);
  const IterativeSampler sampler(matrix, k, epsilon, variant);
  std::vector<std::size_t> all(pool.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  Rng rng(seed);
  ImageGroup group{std::move(group_id), {}, GroupMethod::kRsi, seed, k, epsilon, variant};
  for (std::size_t i : sampler.draw(all, n, rng)) group.member_ids.push_back(pool[i].id);
  return group;
}

BatchPlan plan_batches(std::size_t pool_size, std::size_t images_per_batch, std::size_t conversations_per_batch,
                       std::pair<std::size_t, std::size_t> group_size_range, bool with_replacement) {
  const auto [lo, hi] = group_size_range;
  if (lo < 2) throw PlanningError("minimum group size must be at least 2");
  if (hi < lo) throw PlanningError("group size range is empty");
  if (images_per_batch == 0) throw PlanningError("images_per_batch must be positive");

  BatchPlan plan;
  plan.group_size_lo = lo;
  plan.group_size_hi = hi;
  if (conversations_per_batch == 0) return plan;

  auto add = [&](std::size_t first, std::size_t images, std::size_t conversations) {
    if (conversations == 0) return;
    if (!with_replacement && conversations * lo > images) {
      throw PlanningError(fmt::format("infeasible plan: {} groups of at least {} images need {} images, batch has {}",
                                      conversations, lo, conversations * lo, images));
    }
    if (with_replacement && lo > images) {
      throw PlanningError(fmt::format("infeasible plan: groups of {} images from a batch of {}", lo, images));
    }
    plan.batches.push_back({plan.batches.size(), first, images, conversations});
    plan.total_groups += conversations;
  };

  const std::size_t full = pool_size / images_per_batch;
  for (std::size_t b = 0; b < full; ++b) add(b * images_per_batch, images_per_batch, conversations_per_batch);
  const std::size_t rest = pool_size % images_per_batch;
  if (rest > 0) {
    const auto scaled = static_cast<std::size_t>(
        (static_cast<unsigned __int128>(rest) * conversations_per_batch) / images_per_batch);
    add(full * images_per_batch, rest, scaled);
  }
  return plan;
}

void validate(const SamplingOptions& o) {
  if (o.k < 1) throw ConfigError("k must be >= 1");
  if (!(o.epsilon > 0.0) || !std::isfinite(o.epsilon)) throw ConfigError("epsilon must be a positive number");
  if (o.group_size_lo < 2) throw ConfigError("group size lower bound must be >= 2");
  if (o.group_size_hi < o.group_size_lo) throw ConfigError("group size range is empty");
  if (o.images_per_batch == 0) throw ConfigError("images_per_batch must be positive");
}

namespace {

constexpr std::uint64_t kShuffleStream = 0x53485546464c45ULL;  // "SHUFFLE"
constexpr std::uint64_t kGcmaStream = 0x47434d41ULL;           // "GCMA"

std::size_t draw_size(Rng& rng, const SamplingOptions& o) {
  return static_cast<std::size_t>(
      rng.between(static_cast<std::int64_t>(o.group_size_lo), static_cast<std::int64_t>(o.group_size_hi)));
}

}  // namespace

std::vector<ImageGroup> sample_rsi_groups(const std::vector<FusedEmbedding>& points, const SamplingOptions& o) {
  validate(o);
  const auto plan = plan_batches(points.size(), o.images_per_batch, o.conversations_per_batch,
                                 {o.group_size_lo, o.group_size_hi}, o.with_replacement);
  const auto matrix = PointMatrix::from(points);
  const IterativeSampler sampler(matrix, o.k, o.epsilon, o.variant);

  std::vector<std::size_t> order(points.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng shuffler(derive_seed(o.seed, {kShuffleStream}));
  shuffler.shuffle(order);

  std::vector<ImageGroup> groups;
  groups.reserve(plan.total_groups);
  for (const auto& batch : plan.batches) {
    std::vector<std::size_t> pool(order.begin() + static_cast<std::ptrdiff_t>(batch.first),
                                  order.begin() + static_cast<std::ptrdiff_t>(batch.first + batch.images));
    for (std::size_t g = 0; g < batch.conversations; ++g) {
      const std::uint64_t seed = derive_seed(o.seed, {batch.index, g});
      Rng rng(seed);
      std::size_t size = draw_size(rng, o);
      if (!o.with_replacement) {
        const std::size_t reserved = (batch.conversations - g - 1) * o.group_size_lo;
        size = std::min(size, pool.size() - reserved);
      }
      size = std::min(size, pool.size());
      const auto members = sampler.draw(pool, size, rng);

      ImageGroup group{fmt::format("rsi_b{:04}_g{:05}", batch.index, g), {}, GroupMethod::kRsi, seed,
                       o.k, o.epsilon, o.variant};
      for (std::size_t m : members) group.member_ids.push_back(points[m].id);
      groups.push_back(std::move(group));

      if (!o.with_replacement) {
        const std::unordered_set<std::size_t> taken(members.begin(), members.end());
        std::erase_if(pool, [&](std::size_t i) { return taken.contains(i); });
      }
    }
  }
  return groups;
}

std::vector<ImageGroup> sample_gcma_groups(const std::vector<MatchedPair>& matches,
                                           const std::vector<FusedEmbedding>& points, const SamplingOptions& o) {
  validate(o);
  std::unordered_map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < points.size(); ++i) index.emplace(points[i].id, i);
  const auto matrix = PointMatrix::from(points);
  const IterativeSampler sampler(matrix, o.k, o.epsilon, o.variant);

  std::vector<ImageGroup> groups;
  for (std::size_t m = 0; m < matches.size(); ++m) {
    std::vector<std::size_t> pool;
    std::vector<std::string> missing;
    for (const auto& id : matches[m].union_ids) {
      if (auto it = index.find(id); it != index.end()) {
        pool.push_back(it->second);
      } else {
        missing.push_back(id);
      }
    }
    if (!missing.empty()) {
      throw ValidationError(fmt::format("matched union {} references {} id(s) without vectors, e.g. \"{}\"", m,
                                        missing.size(), missing.front()),
                            missing);
    }
    for (std::size_t g = 0; pool.size() >= o.group_size_lo; ++g) {
      const std::uint64_t seed = derive_seed(o.seed, {kGcmaStream, m, g});
      Rng rng(seed);
      const std::size_t size = std::min(draw_size(rng, o), pool.size());
      const auto members = sampler.draw(pool, size, rng);
      ImageGroup group{fmt::format("gcma_m{:05}_g{:03}", m, g), {}, GroupMethod::kGcma, seed,
                       o.k, o.epsilon, o.variant};
      for (std::size_t i : members) group.member_ids.push_back(points[i].id);
      groups.push_back(std::move(group));
      const std::unordered_set<std::size_t> taken(members.begin(), members.end());
      std::erase_if(pool, [&](std::size_t i) { return taken.contains(i); });
    }
  }
  return groups;
}

json to_json(const ImageGroup& group) {
  json j = {{"group_id", group.group_id},
            {"member_ids", group.member_ids},
            {"method", to_string(group.method)},
            {"seed", group.seed},
            {"k", group.k},
            {"epsilon", group.epsilon}};
  if (group.variant == SamplingVariant::kFarthest) j["variant"] = "farthest";
  return j;
}

ImageGroup group_from_json(const json& r, std::size_t line) {
  ImageGroup g;
  g.group_id = require_string(r, "group_id", line);
  g.member_ids = require_string_list(r, "member_ids", line);
  g.method = group_method_from_string(require_string(r, "method", line));
  const auto& seed = require_field(r, "seed", line);
  if (!seed.is_number_integer()) throw ParseError("seed must be an integer", line);
  g.seed = seed.get<std::uint64_t>();
  g.k = require_field(r, "k", line).get<int>();
  g.epsilon = require_field(r, "epsilon", line).get<double>();
  if (r.value("variant", "nearest") == "farthest") g.variant = SamplingVariant::kFarthest;
  if (g.member_ids.size() < 2) throw ValidationError("group \"" + g.group_id + "\" has fewer than 2 members", {g.group_id});
  if (std::unordered_set<std::string>(g.member_ids.begin(), g.member_ids.end()).size() != g.member_ids.size()) {
    throw ValidationError("group \"" + g.group_id + "\" has duplicate members", {g.group_id});
  }
  return g;
}

std::vector<ImageGroup> read_groups(const std::filesystem::path& path) {
  std::vector<ImageGroup> out;
  std::unordered_set<std::string> seen;
  read_jsonl(path, [&](const json& r, std::size_t line) {
    auto g = group_from_json(r, line);
    if (!seen.insert(g.group_id).second) throw ValidationError("duplicate group id \"" + g.group_id + "\"", {g.group_id});
    out.push_back(std::move(g));
  });
  return out;
}

void write_groups(const std::vector<ImageGroup>& groups, const std::filesystem::path& path) {
  std::vector<json> lines;
  lines.reserve(groups.size());
  for (const auto& g : groups) lines.push_back(to_json(g));
  write_jsonl(path, lines);
}

json to_json(const MatchedPair& pair, std::size_t index) {
  return {{"pair_id", index},
          {"union_ids", pair.union_ids},
          {"score", pair.score},
          {"source_sizes", {pair.source_sizes.first, pair.source_sizes.second}}};
}

std::vector<MatchedPair> read_matches(const std::filesystem::path& path) {
  std::vector<MatchedPair> out;
  read_jsonl(path, [&](const json& r, std::size_t line) {
    MatchedPair p;
    p.union_ids = require_string_list(r, "union_ids", line);
    if (p.union_ids.empty()) throw ValidationError("empty union at line " + std::to_string(line));
    p.score = require_field(r, "score", line).get<double>();
    const auto sizes = require_field(r, "source_sizes", line).get<std::vector<std::size_t>>();
    if (sizes.size() != 2) throw ParseError("source_sizes must have two entries", line);
    p.source_sizes = {sizes[0], sizes[1]};
    out.push_back(std::move(p));
  });
  return out;
}

void write_matches(const MatchResult& result, const std::filesystem::path& path) {
  std::vector<json> lines;
  lines.reserve(result.pairs.size());
  for (std::size_t i = 0; i < result.pairs.size(); ++i) lines.push_back(to_json(result.pairs[i], i));
  write_jsonl(path, lines);
}

}  // namespace multimage
