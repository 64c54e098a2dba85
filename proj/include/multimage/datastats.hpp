#pragma once

#include <cstddef>
#include <filesystem>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include "multimage/generation.hpp"
#include "multimage/jsonl.hpp"

namespace multimage {

struct Violation {
  std::size_t line = 0;
  std::string id;  // empty when the line could not be decoded
  std::string message;
};

struct ValidationReport {
  std::size_t lines = 0;
  std::size_t valid = 0;
  std::vector<Violation> violations;

  bool ok() const { return violations.empty(); }
  json to_json() const;
};

// Every line is checked independently, so one bad line (including a torn
// final line) never hides problems elsewhere. Always checked: JSON and schema,
// role alternation starting with the user and ending with the assistant,
// blank turns, duplicate ids. Strict mode adds the turn-count bounds and the
// one-placeholder-per-image rule. IoError if the file cannot be read.
ValidationReport validate_dataset(const std::filesystem::path& path, bool strict, const TurnBounds& bounds = {});

struct TokenCounter {
  std::string name;
  std::function<std::size_t(std::string_view)> count;
};

// Built-in counters: "whitespace" (maximal runs of non-space characters).
// Throws ConfigError for an unknown name.
TokenCounter token_counter(const std::string& name);
std::size_t count_whitespace_tokens(std::string_view text);

// Tokens in a turn, with "<image>" placeholders removed first so the image
// count does not inflate user token averages.
std::size_t turn_tokens(const TokenCounter& counter, std::string_view content);

struct DatasetStats {
  std::size_t num_samples = 0;
  std::size_t max_turns = 0;
  std::size_t min_turns = 0;
  double avg_turns = 0.0;
  double avg_images = 0.0;
  double avg_user_tokens = 0.0;       // mean over all user turns
  double avg_assistant_tokens = 0.0;  // mean over all assistant turns
  std::string token_counter;
  std::vector<std::string> models;  // distinct generator models, sorted

  // Exact totals behind the averages; they make stats mergeable.
  std::size_t total_turns = 0;
  std::size_t total_images = 0;
  std::size_t user_turns = 0;
  std::size_t assistant_turns = 0;
  std::size_t user_tokens = 0;
  std::size_t assistant_tokens = 0;

  json to_json() const;
};

// Streaming accumulator; merge() is associative and commutative.
class StatsAccumulator {
 public:
  explicit StatsAccumulator(TokenCounter counter);
  void add(const Conversation& conv);
  void merge(const StatsAccumulator& other);
  // DomainError when nothing was added.
  DatasetStats finish() const;

 private:
  TokenCounter counter_;
  DatasetStats totals_;
};

DatasetStats compute_stats(const std::vector<Conversation>& convs, const TokenCounter& counter);
DatasetStats compute_stats(const std::filesystem::path& path, const TokenCounter& counter);

// Two-column table with the row labels of the published statistics table,
// followed by a note naming the token counter.
std::string stats_table(const DatasetStats& stats);

inline constexpr std::string_view kStatsRowLabels[] = {
    "Number of Samples",       "Maximum Number of Turns",  "Minimum Number of Turns", "Average Number of Turns",
    "Average Number of Images", "Average User Tokens", "Average Assistant Tokens", "Open-Source LLM",
};

}  // namespace multimage
