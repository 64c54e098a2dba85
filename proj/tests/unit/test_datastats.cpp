#include <doctest.h>

#include "multimage/datastats.hpp"
#include "multimage/error.hpp"
#include "multimage/rng.hpp"
#include "scratch.hpp"

using namespace multimage;
using namespace multimage::testing;

namespace {

Conversation conv(const std::string& id, std::size_t images, const std::vector<std::string>& texts,
                  const std::string& model = "gen-model") {
  Conversation c;
  c.id = id;
  c.group_id = id;
  c.model = model;
  for (std::size_t i = 0; i < images; ++i) c.images.push_back(id + "_" + std::to_string(i) + ".jpg");
  for (std::size_t i = 0; i < texts.size(); ++i) {
    std::string content = texts[i];
    if (i == 0) {
      std::string prefix;
      for (std::size_t k = 0; k < images; ++k) prefix += "<image>\n";
      content = prefix + content;
    }
    c.turns.push_back({i % 2 == 0 ? Role::kUser : Role::kAssistant, content});
  }
  return c;
}

// Fixture with hand-counted tokens:
//   sample a: 4 turns, 2 images. user: 3 + 2 tokens, assistant: 5 + 1
//   sample b: 6 turns, 4 images. user: 4 + 1 + 2, assistant: 6 + 3 + 2
std::vector<Conversation> fixture() {
  return {conv("a", 2, {"what is shown?", "a bus on a road", "and here?", "yes"}),
          conv("b", 4, {"compare all four pictures", "they all show the same street", "why?", "because of light",
                        "rank them", "by size"})};
}

std::string line_of(const Conversation& c) { return dump_line(to_json(c)); }

}  // namespace

TEST_CASE("stats: hand-counted fixture") {
  const auto s = compute_stats(fixture(), token_counter("whitespace"));
  CHECK(s.num_samples == 2);
  CHECK(s.max_turns == 6);
  CHECK(s.min_turns == 4);
  CHECK(s.avg_turns == 5.0);
  CHECK(s.avg_images == 3.0);
  // user tokens 3+2+4+1+2 = 12 over 5 user turns; assistant 5+1+6+3+2 = 17 over 5.
  CHECK(s.user_tokens == 12);
  CHECK(s.assistant_tokens == 17);
  CHECK(s.avg_user_tokens == 12.0 / 5.0);
  CHECK(s.avg_assistant_tokens == 17.0 / 5.0);
  CHECK(s.token_counter == "whitespace");
  CHECK(s.models == std::vector<std::string>{"gen-model"});
  CHECK(s.min_turns <= s.avg_turns);
  CHECK(s.avg_turns <= s.max_turns);
}

TEST_CASE("stats: single sample") {
  const auto s = compute_stats({fixture()[1]}, token_counter("whitespace"));
  CHECK(s.min_turns == s.max_turns);
  CHECK(s.avg_turns == 6.0);
  CHECK(s.avg_images == 4.0);
}

TEST_CASE("stats: empty dataset and unknown counter") {
  CHECK_THROWS_AS(compute_stats(std::vector<Conversation>{}, token_counter("whitespace")), DomainError);
  CHECK_THROWS_AS(token_counter("tiktoken"), ConfigError);
}

TEST_CASE("token counting ignores image placeholders") {
  const auto wc = token_counter("whitespace");
  CHECK(count_whitespace_tokens("  a  b\tc\n") == 3);
  CHECK(count_whitespace_tokens("") == 0);
  CHECK(turn_tokens(wc, "<image>\n<image>\nhello world") == 2);
  CHECK(turn_tokens(wc, "see<image>this") == 2);
}

TEST_CASE("stats: permutation invariant and mergeable") {
  Rng rng(4);
  std::vector<Conversation> convs;
  for (int i = 0; i < 60; ++i) {
    std::vector<std::string> texts;
    const auto turns = 2 * (1 + rng.below(6));
    for (std::uint64_t t = 0; t < turns; ++t) {
      std::string s;
      const auto words = 1 + rng.below(30);
      for (std::uint64_t w = 0; w < words; ++w) s += "w" + std::to_string(w) + " ";
      texts.push_back(s);
    }
    convs.push_back(conv("c" + std::to_string(i), 2 + rng.below(4), texts));
  }
  const auto wc = token_counter("whitespace");
  const auto base = compute_stats(convs, wc);
  for (int t = 0; t < 5; ++t) {
    auto shuffled = convs;
    rng.shuffle(shuffled);
    const auto s = compute_stats(shuffled, wc);
    CHECK(s.to_json() == base.to_json());
  }

  // Split in two, merge, and compare against sample-weighted averages.
  std::vector<Conversation> left(convs.begin(), convs.begin() + 23), right(convs.begin() + 23, convs.end());
  StatsAccumulator a(wc), b(wc);
  for (const auto& c : left) a.add(c);
  for (const auto& c : right) b.add(c);
  const auto sl = a.finish(), sr = b.finish();
  a.merge(b);
  const auto merged = a.finish();
  CHECK(merged.to_json() == base.to_json());
  const double nl = static_cast<double>(sl.num_samples), nr = static_cast<double>(sr.num_samples);
  CHECK(std::abs(merged.avg_turns - (sl.avg_turns * nl + sr.avg_turns * nr) / (nl + nr)) <= 1e-12);
  CHECK(std::abs(merged.avg_images - (sl.avg_images * nl + sr.avg_images * nr) / (nl + nr)) <= 1e-12);
  const double ul = static_cast<double>(sl.user_turns), ur = static_cast<double>(sr.user_turns);
  CHECK(std::abs(merged.avg_user_tokens - (sl.avg_user_tokens * ul + sr.avg_user_tokens * ur) / (ul + ur)) <= 1e-12);

  StatsAccumulator empty(wc);
  StatsAccumulator c(wc);
  for (const auto& x : convs) c.add(x);
  c.merge(empty);
  CHECK(c.finish().to_json() == base.to_json());
}

TEST_CASE("stats from a file equal stats from memory") {
  Scratch dir;
  write_conversations(fixture(), dir / "d.jsonl");
  const auto wc = token_counter("whitespace");
  CHECK(compute_stats(dir / "d.jsonl", wc).to_json() == compute_stats(fixture(), wc).to_json());
}

TEST_CASE("stats table uses the published row labels") {
  const auto table = stats_table(compute_stats(fixture(), token_counter("whitespace")));
  for (auto label : kStatsRowLabels) CHECK(table.find(label) != std::string::npos);
  auto row = [&](std::string_view label) {
    const auto start = table.find(label);
    return table.substr(start, table.find('\n', start) - start);
  };
  CHECK(row("Number of Samples").ends_with(" 2"));
  CHECK(row("Average Number of Turns").ends_with(" 5.00"));
  CHECK(row("Average Number of Images").ends_with(" 3.00"));
  CHECK(row("Average User Tokens").ends_with(" 2.40"));
  CHECK(row("Average Assistant Tokens").ends_with(" 3.40"));
  CHECK(row("Open-Source LLM").ends_with(" gen-model"));
  CHECK(table.find("whitespace") != std::string::npos);
}

TEST_CASE("validate: clean fixture") {
  Scratch dir;
  std::string text;
  for (int i = 0; i < 5; ++i) text += line_of(conv("s" + std::to_string(i), 2, {"q", "a", "q2", "a2"})) + "\n";
  write_text(dir / "clean.jsonl", text);
  for (bool strict : {false, true}) {
    const auto r = validate_dataset(dir / "clean.jsonl", strict);
    CHECK(r.ok());
    CHECK(r.lines == 5);
    CHECK(r.valid == 5);
  }
}

TEST_CASE("validate: broken alternation is reported at its line") {
  Scratch dir;
  auto bad = conv("bad", 1, {"q", "a", "q2", "a2"});
  bad.turns[2].role = Role::kAssistant;
  write_text(dir / "d.jsonl", line_of(conv("ok", 1, {"q", "a"})) + "\n" + line_of(bad) + "\n" +
                                  line_of(conv("ok2", 1, {"q", "a"})) + "\n");
  const auto r = validate_dataset(dir / "d.jsonl", false);
  REQUIRE_FALSE(r.ok());
  CHECK(r.violations[0].line == 2);
  CHECK(r.violations[0].id == "bad");
  CHECK(r.valid == 2);
}

TEST_CASE("validate: a truncated final line does not hide earlier lines") {
  Scratch dir;
  auto dup = conv("s0", 1, {"q", "a"});
  const auto last = line_of(conv("s2", 1, {"q", "a"}));
  write_text(dir / "d.jsonl", line_of(conv("s0", 1, {"q", "a"})) + "\n" + line_of(dup) + "\n" +
                                  last.substr(0, last.size() / 2));
  const auto r = validate_dataset(dir / "d.jsonl", false);
  REQUIRE(r.violations.size() == 2);
  CHECK(r.violations[0].line == 2);
  CHECK(r.violations[0].message == "duplicate id");
  CHECK(r.violations[1].line == 3);
  CHECK(r.violations[1].id.empty());
  CHECK(r.lines == 3);
}

TEST_CASE("validate: strict adds turn bounds and placeholder rules") {
  Scratch dir;
  auto no_placeholders = conv("p", 2, {"q", "a"});
  no_placeholders.turns[0].content = "q";
  std::vector<std::string> long_texts(26, "x");
  write_text(dir / "d.jsonl", line_of(no_placeholders) + "\n" + line_of(conv("long", 1, long_texts)) + "\n");
  CHECK(validate_dataset(dir / "d.jsonl", false).ok());
  const auto r = validate_dataset(dir / "d.jsonl", true);
  CHECK(r.violations.size() == 2);
  CHECK(validate_dataset(dir / "d.jsonl", true, TurnBounds{2, 30}).violations.size() == 1);
  CHECK_THROWS_AS(validate_dataset(dir / "missing.jsonl", true), IoError);
}

TEST_CASE("stats: generator models are listed once, sorted, across merges") {
  const auto wc = token_counter("whitespace");
  StatsAccumulator left(wc), right(wc);
  left.add(conv("a", 1, {"q", "a"}, "zeta"));
  left.add(conv("b", 1, {"q", "a"}, "alpha"));
  right.add(conv("c", 1, {"q", "a"}, "alpha"));
  right.add(conv("d", 1, {"q", "a"}, "mu"));
  left.merge(right);
  CHECK(left.finish().models == std::vector<std::string>{"alpha", "mu", "zeta"});
  CHECK(stats_table(left.finish()).find("alpha, mu, zeta") != std::string::npos);
}
