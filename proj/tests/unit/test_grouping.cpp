#include <doctest.h>

#include <cmath>
#include <map>
#include <set>
#include <unordered_set>

#include "multimage/error.hpp"
#include "multimage/grouping.hpp"
#include "oracles.hpp"
#include "scratch.hpp"

using namespace multimage;
using namespace multimage::testing;

namespace {

std::vector<FusedEmbedding> line_points(const std::vector<double>& xs, const std::string& prefix = "x") {
  std::vector<FusedEmbedding> out;
  for (std::size_t i = 0; i < xs.size(); ++i) out.push_back({prefix + std::to_string(i), {xs[i]}});
  return out;
}

std::vector<FusedEmbedding> random_points(Rng& rng, std::size_t n, std::size_t d) {
  std::vector<FusedEmbedding> out;
  for (std::size_t i = 0; i < n; ++i) {
    FusedEmbedding p{"id" + std::to_string(i), std::vector<double>(d)};
    for (auto& x : p.vector) x = rng.uniform() * 10;
    out.push_back(std::move(p));
  }
  return out;
}

std::set<std::string> as_set(const IdSet& v) { return {v.begin(), v.end()}; }

SamplingOptions small_options(std::uint64_t seed) {
  SamplingOptions o;
  o.images_per_batch = 40;
  o.conversations_per_batch = 8;
  o.seed = seed;
  return o;
}

}  // namespace

TEST_CASE("match_score examples") {
  CHECK(match_score({"1", "2", "3"}, {"1", "2", "3"}) == 1.0);
  CHECK(match_score({"1", "2"}, {"3", "4"}) == 0.0);
  CHECK(match_score({"1", "2", "3"}, {"2", "3", "4"}) == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
  CHECK_THROWS_AS(match_score({}, {"1"}), DomainError);
}

TEST_CASE("match_score is symmetric") {
  Rng rng(1);
  for (int t = 0; t < 500; ++t) {
    IdSet a, b;
    for (int i = 0; i < 10; ++i) {
      if (rng.below(2)) a.push_back(std::to_string(i));
      if (rng.below(2)) b.push_back(std::to_string(i));
    }
    if (a.empty() || b.empty()) continue;
    CHECK(match_score(a, b) == match_score(b, a));
    const double s = match_score(a, b);
    CHECK(s >= 0.0);
    CHECK(s <= 1.0);
  }
}

TEST_CASE("greedy match: hand-traced example") {
  const auto r = greedy_cluster_match({{"1", "2", "3"}, {"7", "8"}}, {{"2", "3", "4"}, {"8", "9"}});
  REQUIRE(r.pairs.size() == 2);
  CHECK(as_set(r.pairs[0].union_ids) == std::set<std::string>{"1", "2", "3", "4"});
  CHECK(as_set(r.pairs[1].union_ids) == std::set<std::string>{"7", "8", "9"});
  CHECK(r.total_samples == 7);
  CHECK(r.pairs[0].score == doctest::Approx(2.0 / 3.0));
  CHECK(r.pairs[0].source_sizes == std::pair<std::size_t, std::size_t>{3, 3});
}

TEST_CASE("greedy match: empty side") {
  const auto r = greedy_cluster_match({{"1", "2"}}, {});
  CHECK(r.pairs.empty());
  CHECK(r.total_samples == 0);
}

TEST_CASE("greedy match: identical lists pair each cluster with itself") {
  std::vector<IdSet> c{{"a", "b", "c"}, {"d", "e"}, {"f"}};
  const auto r = greedy_cluster_match(c, c);
  REQUIRE(r.pairs.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) CHECK(as_set(r.pairs[i].union_ids) == as_set(c[i]));
  CHECK(r.total_samples == 6);
}

TEST_CASE("greedy match: agrees with the reference transcription") {
  Rng rng(2);
  for (int t = 0; t < 200; ++t) {
    std::vector<std::set<int>> o1, o2;
    std::vector<IdSet> c1, c2;
    for (auto* pair : {&o1, &o2}) {
      const auto k = rng.below(6);
      for (std::uint64_t i = 0; i < k; ++i) {
        std::set<int> s;
        const auto size = 1 + rng.below(5);
        while (s.size() < size) s.insert(static_cast<int>(rng.below(20)));
        pair->push_back(s);
      }
    }
    for (const auto& s : o1) {
      IdSet v;
      for (int x : s) v.push_back(std::to_string(x));
      c1.push_back(v);
    }
    for (const auto& s : o2) {
      IdSet v;
      for (int x : s) v.push_back(std::to_string(x));
      c2.push_back(v);
    }
    const auto ref = oracle_greedy_match(o1, o2);
    const auto got = greedy_cluster_match(c1, c2);
    REQUIRE(got.pairs.size() == ref.unions.size());
    CHECK(got.total_samples == ref.total);
    std::size_t sum = 0;
    for (std::size_t i = 0; i < ref.unions.size(); ++i) {
      std::set<std::string> expect;
      for (int x : ref.unions[i]) expect.insert(std::to_string(x));
      CHECK(as_set(got.pairs[i].union_ids) == expect);
      CHECK(got.pairs[i].union_ids.size() == expect.size());  // no duplicates inside a union
      sum += got.pairs[i].union_ids.size();
    }
    CHECK(sum == got.total_samples);
    CHECK(got.pairs.size() == std::min(c1.size(), c2.size()));
  }
}

TEST_CASE("sampling distribution: 1-d hand cases") {
  const auto cand = line_points({1, 3}, "c");
  const auto sel = line_points({0}, "s");
  auto p = sampling_distribution(cand, sel, 1, 1e-12);
  CHECK(p[0] == doctest::Approx(0.75).epsilon(1e-10));
  CHECK(p[1] == doctest::Approx(0.25).epsilon(1e-10));

  p = sampling_distribution(cand, sel, 12, 1e-12);
  CHECK(p[0] > 0.999998);
  CHECK(p[0] == doctest::Approx(1.0 / (1.0 + std::pow(3.0, -12))).epsilon(1e-12));
}

TEST_CASE("sampling distribution: symmetry, normalisation, domain") {
  const auto sel = line_points({0}, "s");
  const auto p = sampling_distribution(line_points({-2, 2}, "c"), sel, 6, 1e-8);
  CHECK(p[0] == p[1]);

  Rng rng(3);
  for (int t = 0; t < 100; ++t) {
    const auto cand = random_points(rng, 1 + rng.below(10), 3);
    const auto chosen = random_points(rng, 1 + rng.below(4), 3);
    const int k = 1 + static_cast<int>(rng.below(12));
    const auto q = sampling_distribution(cand, chosen, k, 1e-8);
    double sum = 0;
    for (double x : q) {
      CHECK(x >= 0.0);
      sum += x;
    }
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
  }
  CHECK_THROWS_AS(sampling_distribution({}, sel, 1, 1e-8), DomainError);
  CHECK_THROWS_AS(sampling_distribution(line_points({1}), {}, 1, 1e-8), DomainError);
  CHECK_THROWS_AS(sampling_distribution(line_points({1}), sel, 0, 1e-8), DomainError);
  CHECK_THROWS_AS(sampling_distribution(line_points({1}), sel, 1, 0.0), DomainError);
}

TEST_CASE("sampling distribution: scale invariance as epsilon vanishes") {
  Rng rng(4);
  for (int t = 0; t < 50; ++t) {
    const auto cand = random_points(rng, 6, 2);
    const auto sel = random_points(rng, 2, 2);
    const int k = 1 + static_cast<int>(rng.below(6));
    const double lambda = 0.25 + rng.uniform() * 4;
    auto scaled = [&](std::vector<FusedEmbedding> v) {
      for (auto& p : v) {
        for (auto& x : p.vector) x *= lambda;
      }
      return v;
    };
    const auto a = sampling_distribution(cand, sel, k, 1e-300);
    const auto b = sampling_distribution(scaled(cand), scaled(sel), k, 1e-300);
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(b[i] == doctest::Approx(a[i]).epsilon(1e-12));
  }
}

TEST_CASE("ipow matches repeated multiplication") {
  CHECK(ipow(3.0, 12) == 531441.0);
  CHECK(ipow(2.0, 1) == 2.0);
  CHECK(ipow(0.5, 3) == 0.125);
  CHECK(ipow(7.0, 0) == 1.0);
}

TEST_CASE("random_sample_iteration: forced selection and determinism") {
  const auto pool = line_points({0, 5, 9, 14});
  const auto g = random_sample_iteration(pool, 4, 12, 1e-8, 99);
  CHECK(as_set(g.member_ids) == std::set<std::string>{"x0", "x1", "x2", "x3"});
  Rng rng(5);
  const auto big = random_points(rng, 30, 3);
  const auto first = random_sample_iteration(big, 5, 12, 1e-8, 1234);
  for (int i = 0; i < 100; ++i) CHECK(random_sample_iteration(big, 5, 12, 1e-8, 1234) == first);
  CHECK(first.member_ids.size() == 5);
  CHECK(as_set(first.member_ids).size() == 5);
  CHECK_THROWS_AS(random_sample_iteration(pool, 5, 12, 1e-8, 1), DomainError);
  CHECK_THROWS_AS(random_sample_iteration(pool, 1, 12, 1e-8, 1), DomainError);
}

TEST_CASE("random_sample_iteration: near neighbour dominates at k = 12") {
  const auto pool = line_points({0, 1, 100, 101});
  std::size_t first_zero = 0, then_one = 0;
  for (std::uint64_t s = 0; s < 10000; ++s) {
    const auto g = random_sample_iteration(pool, 2, 12, 1e-8, s);
    if (g.member_ids[0] != "x0") continue;
    ++first_zero;
    then_one += g.member_ids[1] == "x1";
  }
  CHECK(first_zero > 2000);
  CHECK(static_cast<double>(then_one) >= 0.999 * static_cast<double>(first_zero));
}

TEST_CASE("farthest variant takes the argmax") {
  const auto pool = line_points({0, 1, 100, 101});
  const auto m = PointMatrix::from(pool);
  IterativeSampler s(m, 2, 1e-8, SamplingVariant::kFarthest);
  Rng rng(6);
  CHECK(s.draw_next({1, 2, 3}, {0}, rng) == 3);
}

TEST_CASE("draw_next frequencies follow the distribution") {
  const auto pool = line_points({0, 1, 2, 4});
  const auto m = PointMatrix::from(pool);
  IterativeSampler s(m, 1, 1e-12);
  const auto p = sampling_distribution({pool[1], pool[2], pool[3]}, {pool[0]}, 1, 1e-12);
  Rng rng(7);
  std::map<std::size_t, int> counts;
  const int n = 20000;
  for (int i = 0; i < n; ++i) counts[s.draw_next({1, 2, 3}, {0}, rng)]++;
  for (std::size_t j = 0; j < 3; ++j) {
    const double expected = p[j] * n;
    const double sd = std::sqrt(n * p[j] * (1 - p[j]));
    CHECK(std::abs(counts[j + 1] - expected) < 5 * sd);
  }
}

TEST_CASE("plan_batches: published constants") {
  auto plan = plan_batches(40000, 20000, 5000, {4, 5});
  CHECK(plan.batches.size() == 2);
  CHECK(plan.total_groups == 10000);
  plan = plan_batches(640000, 20000, 5000, {4, 5});
  CHECK(plan.batches.size() == 32);
  CHECK(plan.total_groups == 160000);
  for (const auto& b : plan.batches) {
    CHECK(b.images == 20000);
    CHECK(b.conversations == 5000);
  }
}

TEST_CASE("plan_batches: empty, partial and infeasible plans") {
  CHECK(plan_batches(1000, 20000, 0, {4, 5}).batches.empty());
  // 50 images, batches of 20 with 5 groups: 2 full batches, remainder 10 -> floor(10*5/20) = 2.
  const auto plan = plan_batches(50, 20, 5, {4, 5});
  REQUIRE(plan.batches.size() == 3);
  CHECK(plan.batches[2].images == 10);
  CHECK(plan.batches[2].conversations == 2);
  CHECK(plan.total_groups == 12);
  // Remainder too small to host any group is dropped.
  CHECK(plan_batches(21, 20, 5, {4, 5}).batches.size() == 1);
  CHECK_THROWS_AS(plan_batches(100, 20, 6, {4, 5}), PlanningError);
  CHECK_NOTHROW(plan_batches(100, 20, 6, {4, 5}, true));
  CHECK_THROWS_AS(plan_batches(100, 20, 5, {1, 5}), PlanningError);
  CHECK_THROWS_AS(plan_batches(3, 3, 1, {4, 5}, true), PlanningError);
}

TEST_CASE("rsi groups: sizes, disjointness, determinism") {
  Rng rng(8);
  const auto pts = random_points(rng, 100, 4);
  const auto o = small_options(77);
  const auto groups = sample_rsi_groups(pts, o);
  // 2 full batches of 40 plus a remainder of 20 -> 4 groups.
  CHECK(groups.size() == 8 + 8 + 4);
  std::map<std::string, std::unordered_set<std::string>> per_batch;
  for (const auto& g : groups) {
    CHECK(g.member_ids.size() >= 4);
    CHECK(g.member_ids.size() <= 5);
    CHECK(as_set(g.member_ids).size() == g.member_ids.size());
    const auto batch = g.group_id.substr(0, 9);
    for (const auto& id : g.member_ids) CHECK(per_batch[batch].insert(id).second);
  }
  CHECK(sample_rsi_groups(pts, o) == groups);
  CHECK(sample_rsi_groups(pts, small_options(78)) != groups);
}

TEST_CASE("rsi groups: tight batches clamp sizes to stay feasible") {
  Rng rng(9);
  const auto pts = random_points(rng, 40, 2);
  auto o = small_options(1);
  o.conversations_per_batch = 10;  // exactly 4 images per group available
  const auto groups = sample_rsi_groups(pts, o);
  CHECK(groups.size() == 10);
  std::unordered_set<std::string> all;
  for (const auto& g : groups) {
    CHECK(g.member_ids.size() == 4);
    for (const auto& id : g.member_ids) all.insert(id);
  }
  CHECK(all.size() == 40);
}

TEST_CASE("rsi groups: with replacement may reuse ids across groups") {
  Rng rng(10);
  const auto pts = random_points(rng, 10, 2);
  auto o = small_options(3);
  o.images_per_batch = 10;
  o.conversations_per_batch = 6;
  o.with_replacement = true;
  const auto groups = sample_rsi_groups(pts, o);
  CHECK(groups.size() == 6);
  for (const auto& g : groups) CHECK(as_set(g.member_ids).size() == g.member_ids.size());
}

TEST_CASE("gcma groups stay inside their union and do not overlap") {
  Rng rng(11);
  const auto pts = random_points(rng, 30, 3);
  std::vector<MatchedPair> matches(2);
  for (int i = 0; i < 13; ++i) matches[0].union_ids.push_back(pts[i].id);
  for (int i = 13; i < 30; ++i) matches[1].union_ids.push_back(pts[i].id);
  const auto groups = sample_gcma_groups(matches, pts, small_options(5));
  std::unordered_set<std::string> used;
  for (const auto& g : groups) {
    CHECK(g.method == GroupMethod::kGcma);
    const auto m = std::stoi(g.group_id.substr(6, 5));
    const auto u = as_set(matches[m].union_ids);
    for (const auto& id : g.member_ids) {
      CHECK(u.count(id) == 1);
      CHECK(used.insert(id).second);
    }
  }
  CHECK(groups.size() >= 5);
  CHECK(sample_gcma_groups(matches, pts, small_options(5)) == groups);

  matches[0].union_ids.push_back("ghost");
  CHECK_THROWS_AS(sample_gcma_groups(matches, pts, small_options(5)), ValidationError);
}

TEST_CASE("group and match files round trip") {
  Scratch dir;
  std::vector<ImageGroup> groups{{"g1", {"a", "b", "c"}, GroupMethod::kRsi, 0xffffffffffffffffULL, 12, 1e-8},
                                 {"g2", {"d", "e"}, GroupMethod::kGcma, 7, 3, 0.5, SamplingVariant::kFarthest}};
  write_groups(groups, dir / "g.jsonl");
  CHECK(read_groups(dir / "g.jsonl") == groups);

  write_text(dir / "dup.jsonl",
             R"({"group_id":"g","member_ids":["a","a"],"method":"rsi","seed":1,"k":12,"epsilon":1e-8})"
             "\n");
  CHECK_THROWS_AS(read_groups(dir / "dup.jsonl"), ValidationError);

  const auto r = greedy_cluster_match({{"1", "2", "3"}, {"7", "8"}}, {{"2", "3", "4"}, {"8", "9"}});
  write_matches(r, dir / "m.jsonl");
  const auto back = read_matches(dir / "m.jsonl");
  REQUIRE(back.size() == 2);
  CHECK(back[0].union_ids == r.pairs[0].union_ids);
  CHECK(back[1].score == r.pairs[1].score);
}

TEST_CASE("sampling options validation") {
  SamplingOptions o;
  o.k = 0;
  CHECK_THROWS_AS(validate(o), ConfigError);
  o = {};
  o.epsilon = -1;
  CHECK_THROWS_AS(validate(o), ConfigError);
  o = {};
  o.group_size_lo = 6;
  CHECK_THROWS_AS(validate(o), ConfigError);
}
