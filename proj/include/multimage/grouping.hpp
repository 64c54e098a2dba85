#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "multimage/fusion.hpp"
#include "multimage/rng.hpp"

namespace multimage {

// An ordered list of distinct corpus ids.
using IdSet = std::vector<std::string>;

// |A ∩ B| / ((|A| + |B|) / 2). Symmetric, in [0, 1]. DomainError on an empty set.
double match_score(const IdSet& a, const IdSet& b);

struct MatchedPair {
  IdSet union_ids;  // the popped (larger) cluster's ids, then the match's new ids
  double score = 0.0;
  std::pair<std::size_t, std::size_t> source_sizes;  // (popped cluster, its match)
};

struct MatchResult {
  std::vector<MatchedPair> pairs;
  std::size_t total_samples = 0;
};

// Greedy cluster matching between two clusterings of the same corpus. Both
// lists are stably sorted by size, largest first; while both are non-empty the
// larger head is popped (c1 wins ties), the first cluster with the highest
// score in the other list is taken as its match and removed, and their union
// is emitted. total_samples is the sum of union sizes.
MatchResult greedy_cluster_match(std::vector<IdSet> c1, std::vector<IdSet> c2);

// Integer power by repeated squaring; bit-reproducible across platforms.
double ipow(double base, int exponent);

// Eq. weights w_j = 1 / (sum_u ||x_j - x_u||^k + epsilon) over the selected
// points u, normalised to sum to 1, for each candidate in order. Sums run over
// `selected` in the given order. DomainError on empty candidates or selection,
// k < 1 or epsilon <= 0.
std::vector<double> sampling_distribution(const std::vector<FusedEmbedding>& candidates,
                                          const std::vector<FusedEmbedding>& selected, int k,
                                          double epsilon);

enum class SamplingVariant {
  kNearest,   // inverse-distance weighting (the default)
  kFarthest,  // deterministic argmax of summed distance^k
};

enum class GroupMethod { kRsi, kGcma };

std::string to_string(GroupMethod method);
GroupMethod group_method_from_string(const std::string& s);

struct ImageGroup {
  std::string group_id;
  std::vector<std::string> member_ids;
  GroupMethod method = GroupMethod::kRsi;
  std::uint64_t seed = 0;
  int k = 12;
  double epsilon = 1e-8;
  SamplingVariant variant = SamplingVariant::kNearest;

  bool operator==(const ImageGroup&) const = default;
};

// Iterative sampler over a fixed point matrix. Keeps the running distance sums
// of every candidate so each draw costs O(pool * d).
class IterativeSampler {
 public:
  IterativeSampler(const PointMatrix& points, int k, double epsilon,
                   SamplingVariant variant = SamplingVariant::kNearest);

  // Draws `size` distinct members from `available` (indices into the point
  // matrix): the first uniformly, the rest from the weighted distribution.
  std::vector<std::size_t> draw(const std::vector<std::size_t>& available, std::size_t size, Rng& rng) const;

  // Draws one candidate given already-selected points. Exposed so that the
  // per-step distribution can be checked empirically.
  std::size_t draw_next(const std::vector<std::size_t>& candidates, const std::vector<std::size_t>& selected,
                        Rng& rng) const;

 private:
  std::size_t pick(const std::vector<std::size_t>& candidates, const std::vector<double>& sums, Rng& rng) const;

  const PointMatrix& points_;
  int k_;
  double epsilon_;
  SamplingVariant variant_;
};

// One group of n members drawn from the pool without replacement.
ImageGroup random_sample_iteration(const std::vector<FusedEmbedding>& pool, std::size_t n, int k,
                                   double epsilon, std::uint64_t seed, std::string group_id = "rsi",
                                   SamplingVariant variant = SamplingVariant::kNearest);

struct BatchPlan {
  struct Batch {
    std::size_t index = 0;
    std::size_t first = 0;   // offset into the shuffled corpus
    std::size_t images = 0;
    std::size_t conversations = 0;
  };
  std::vector<Batch> batches;
  std::size_t total_groups = 0;
  std::size_t group_size_lo = 4;
  std::size_t group_size_hi = 5;
};

// Splits the corpus into full batches of images_per_batch. A remainder (or a
// corpus smaller than one batch) becomes a final partial batch whose
// conversation count is scaled proportionally and dropped if it rounds to 0.
// PlanningError when a batch cannot host its groups: conversations * lo >
// images without replacement, or lo > images with replacement.
BatchPlan plan_batches(std::size_t pool_size, std::size_t images_per_batch,
                       std::size_t conversations_per_batch, std::pair<std::size_t, std::size_t> group_size_range,
                       bool with_replacement = false);

struct SamplingOptions {
  int k = 12;
  double epsilon = 1e-8;
  std::size_t group_size_lo = 4;
  std::size_t group_size_hi = 5;
  std::size_t images_per_batch = 20000;
  std::size_t conversations_per_batch = 5000;
  bool with_replacement = false;
  SamplingVariant variant = SamplingVariant::kNearest;
  std::uint64_t seed = 0;
};

void validate(const SamplingOptions& options);

// Batched iterative sampling over the whole corpus. The corpus is shuffled
// with the run seed and cut into batches; groups inside a batch are drawn in
// sequence, each from its own stream derive_seed(seed, {batch, group}). Without
// replacement, a group's size is clamped so the remaining groups of the batch
// can still get group_size_lo images each.
std::vector<ImageGroup> sample_rsi_groups(const std::vector<FusedEmbedding>& points, const SamplingOptions& options);

// Splits every matched union into groups by iterative sampling without
// replacement inside the union, until fewer than group_size_lo ids remain.
// Unions with ids missing from `points` raise ValidationError.
std::vector<ImageGroup> sample_gcma_groups(const std::vector<MatchedPair>& matches,
                                           const std::vector<FusedEmbedding>& points,
                                           const SamplingOptions& options);

json to_json(const ImageGroup& group);
ImageGroup group_from_json(const json& record, std::size_t line);
std::vector<ImageGroup> read_groups(const std::filesystem::path& path);
void write_groups(const std::vector<ImageGroup>& groups, const std::filesystem::path& path);

json to_json(const MatchedPair& pair, std::size_t index);
std::vector<MatchedPair> read_matches(const std::filesystem::path& path);
void write_matches(const MatchResult& result, const std::filesystem::path& path);

}  // namespace multimage
