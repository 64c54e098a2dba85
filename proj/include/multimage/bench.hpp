#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "multimage/corpus.hpp"
#include "multimage/openai.hpp"

namespace multimage {

inline constexpr std::array<std::string_view, 7> kBenchTopics = {"bird",    "matching",     "ocr",   "pattern",
                                                                  "ranking", "storytelling", "visual"};

struct BenchExample {
  std::string example_id;
  std::string topic;
  std::vector<std::string> images;
  std::vector<std::string> turns;  // user questions, asked in order
  std::optional<std::vector<std::string>> reference;
};

// {"example_id", "topic", "images", "turns", "reference"?} per line.
// ValidationError on an unknown topic, no questions, no images, a reference
// list of the wrong length, or a duplicate id.
std::vector<BenchExample> read_bench(const std::filesystem::path& path);
json to_json(const BenchExample& example);

struct ModelAnswer {
  std::string example_id;
  std::string model_id;
  std::vector<std::string> responses;  // one per question
  std::size_t token_count = 0;

  bool operator==(const ModelAnswer&) const = default;
};

json to_json(const ModelAnswer& answer);
std::vector<ModelAnswer> read_answers(const std::filesystem::path& path);
void write_answers(const std::vector<ModelAnswer>& answers, const std::filesystem::path& path);

struct AnswerOptions {
  std::string model_id;  // label in the answers file; the endpoint model when empty
  std::size_t concurrency = 4;
  double temperature = 0.0;
  int max_tokens = 2048;
};

struct AnswerRun {
  std::vector<ModelAnswer> answers;  // example order, failed examples omitted
  std::vector<ItemFailure> failures;
  int retries = 0;
};

// Asks every question of every example in one growing dialogue: the first user
// message carries the images, each later question follows the model's previous
// reply. token_count is the whitespace token count over all responses.
AnswerRun collect_answers(const std::vector<BenchExample>& examples, const ApiClient& client,
                          const AnswerOptions& options);

enum class Verdict { kAMuchBetter, kABetter, kTie, kBBetter, kBMuchBetter };

// "A>>B", "A>B", "A=B", "B>A", "B>>A".
std::string to_string(Verdict v);
Verdict verdict_from_string(const std::string& s);
// The same judgement with the positions of A and B exchanged.
Verdict mirror(Verdict v);

// The last well-formed [[...]] label in a judge reply. Spaces inside the
// brackets and the "≫" sign are tolerated.
std::optional<Verdict> extract_label(std::string_view text);

struct JudgeVerdict {
  std::string example_id;
  std::string model_a;
  std::string model_b;
  Verdict label = Verdict::kTie;  // about model_a versus model_b
  std::string rationale;
  bool swapped = false;  // model_b was shown in the first position
  bool flagged = false;  // no label could be extracted; recorded as a tie

  bool operator==(const JudgeVerdict&) const = default;
};

json to_json(const JudgeVerdict& verdict);
std::vector<JudgeVerdict> read_verdicts(const std::filesystem::path& path);
void write_verdicts(const std::vector<JudgeVerdict>& verdicts, const std::filesystem::path& path);

struct JudgeOptions {
  std::size_t concurrency = 4;
  double temperature = 0.0;
  int max_tokens = 2048;
};

extern const std::string_view kJudgeSystemPrompt;
extern const std::string_view kJudgeReminder;

// Two games: answer_a shown first, then the positions exchanged. Both returned
// verdicts are about (answer_a.model_id, answer_b.model_id). A reply without a
// label is re-asked once; a second miss becomes a flagged tie.
std::array<JudgeVerdict, 2> judge_pair(const BenchExample& example, const ModelAnswer& answer_a,
                                       const ModelAnswer& answer_b, const ApiClient& judge,
                                       const JudgeOptions& options = {});

struct JudgeRun {
  std::vector<JudgeVerdict> verdicts;
  std::vector<ItemFailure> failures;
  std::size_t skipped = 0;  // (example, model) pairs lacking an answer on either side
};

// Judges every non-baseline model against the baseline on every example both
// answered. Verdicts are ordered by example, then model id.
JudgeRun run_judging(const std::vector<BenchExample>& examples, const std::vector<ModelAnswer>& answers,
                     const std::string& baseline_id, const ApiClient& judge, const JudgeOptions& options = {});

struct Battle {
  std::string model_a;
  std::string model_b;
  double wins_a = 0.0;
  double wins_b = 0.0;

  bool operator==(const Battle&) const = default;
};

// One weighted battle per verdict: a strong preference counts 3 wins, a weak
// one 1 win, a tie half a win each.
std::vector<Battle> verdicts_to_battles(const std::vector<JudgeVerdict>& verdicts);

struct FitOptions {
  double tolerance = 1e-9;  // relative change of every strength
  int max_iterations = 1'000'000;
  double pseudo_count = 1.0;  // wins and losses added against the baseline per model
};

// Bradley-Terry strengths by minorization-maximization, returned as
// beta = log(strength) with the baseline at exactly 0. Every model gets
// pseudo_count wins and losses against the baseline. ValidationError when the
// baseline is absent or the (unsmoothed) comparison graph is disconnected; the
// message lists the models not reachable from the baseline.
std::map<std::string, double> fit_bradley_terry(const std::vector<Battle>& battles, const std::string& baseline_id,
                                                const FitOptions& options = {});

// The same fit in strength space: p = e^beta, baseline exactly 1. Scores are
// computed from strengths so they do not depend on the platform's exp/log.
std::map<std::string, double> fit_strengths(const std::vector<Battle>& battles, const std::string& baseline_id,
                                            const FitOptions& options = {});

// 100 * e^beta / (e^beta + 1): predicted win rate against the baseline.
double bt_score(double beta);
// 100 * p / (p + 1), the same quantity from a strength.
double strength_score(double p);

struct CiDelta {
  double low = 0.0;
  double high = 0.0;
};

// Percentile (linear interpolation between order statistics) bootstrap over
// battles. Round r draws from its own stream derive_seed(seed, {r}), so the
// result does not depend on `concurrency`. Deltas are relative to the point
// score of the full battle set. DomainError when rounds < 100.
std::map<std::string, CiDelta> bootstrap_ci(const std::vector<Battle>& battles, const std::string& baseline_id,
                                            std::size_t rounds, std::uint64_t seed, std::size_t concurrency = 1,
                                            const FitOptions& options = {});

// Linear-interpolation quantile of sorted values, q in [0, 1].
double quantile(const std::vector<double>& sorted, double q);

struct LeaderboardRow {
  std::string model_id;
  double score = 0.0;
  double ci_low_delta = 0.0;
  double ci_high_delta = 0.0;
  long avg_tokens = 0;
  std::optional<double> delta;  // score minus the score of the row's reference model
};

struct Leaderboard {
  std::string baseline_id;
  std::vector<LeaderboardRow> rows;
};

// scores are on the 0-100 scale. Rows sorted by score (descending), ties by
// model id; the baseline row is pinned at 50.0 with zero CI deltas.
// delta_refs maps a model to the model its Δ column is measured against.
// ValidationError when a model is missing from any input.
Leaderboard build_leaderboard(const std::map<std::string, double>& scores, const std::map<std::string, CiDelta>& cis,
                              const std::vector<ModelAnswer>& answers, const std::string& baseline_id,
                              const std::map<std::string, std::string>& delta_refs = {});

std::vector<json> leaderboard_records(const Leaderboard& board);
// Aligned text table: Model Name | Score | Δ | 95% CI | Average Tokens.
std::string leaderboard_table(const Leaderboard& board);

}  // namespace multimage
