#include "multimage/bench.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <set>
#include <unordered_map>
#include <unordered_set>

#include <fmt/core.h>

#include "multimage/datastats.hpp"
#include "multimage/error.hpp"
#include "multimage/parallel.hpp"
#include "multimage/rng.hpp"
#include "multimage/text.hpp"

namespace multimage {

json to_json(const BenchExample& e) {
  json j = {{"example_id", e.example_id}, {"topic", e.topic}, {"images", e.images}, {"turns", e.turns}};
  if (e.reference) j["reference"] = *e.reference;
  return j;
}

std::vector<BenchExample> read_bench(const std::filesystem::path& path) {
  std::vector<BenchExample> out;
  std::unordered_set<std::string> seen;
  read_jsonl(path, [&](const json& r, std::size_t line) {
    BenchExample e;
    e.example_id = require_string(r, "example_id", line);
    e.topic = require_string(r, "topic", line);
    e.images = require_string_list(r, "images", line);
    e.turns = require_string_list(r, "turns", line);
    if (r.contains("reference") && !r["reference"].is_null()) e.reference = require_string_list(r, "reference", line);
    const auto where = fmt::format("example \"{}\" (line {})", e.example_id, line);
    if (std::find(kBenchTopics.begin(), kBenchTopics.end(), e.topic) == kBenchTopics.end()) {
      throw ValidationError(where + ": unknown topic \"" + e.topic + "\"", {e.example_id});
    }
    if (e.turns.empty()) throw ValidationError(where + " has no questions", {e.example_id});
    if (e.images.empty()) throw ValidationError(where + " has no images", {e.example_id});
    for (const auto& q : e.turns) {
      if (trim(q).empty()) throw ValidationError(where + " has a blank question", {e.example_id});
    }
    if (e.reference && e.reference->size() != e.turns.size()) {
      throw ValidationError(where + ": reference answers do not match the questions", {e.example_id});
    }
    if (!seen.insert(e.example_id).second) throw ValidationError("duplicate example id \"" + e.example_id + "\"", {e.example_id});
    out.push_back(std::move(e));
  });
  return out;
}

json to_json(const ModelAnswer& a) {
  return {{"example_id", a.example_id}, {"model_id", a.model_id}, {"responses", a.responses}, {"token_count", a.token_count}};
}

std::vector<ModelAnswer> read_answers(const std::filesystem::path& path) {
  std::vector<ModelAnswer> out;
  read_jsonl(path, [&](const json& r, std::size_t line) {
    ModelAnswer a;
    a.example_id = require_string(r, "example_id", line);
    a.model_id = require_string(r, "model_id", line);
    a.responses = require_string_list(r, "responses", line);
    const auto& tc = require_field(r, "token_count", line);
    if (!tc.is_number_unsigned() && !(tc.is_number_integer() && tc.get<long long>() >= 0)) {
      throw ParseError("token_count must be a non-negative integer", line);
    }
    a.token_count = tc.get<std::size_t>();
    out.push_back(std::move(a));
  });
  return out;
}

void write_answers(const std::vector<ModelAnswer>& answers, const std::filesystem::path& path) {
  std::vector<json> lines;
  for (const auto& a : answers) lines.push_back(to_json(a));
  write_jsonl(path, lines);
}

AnswerRun collect_answers(const std::vector<BenchExample>& examples, const ApiClient& client,
                          const AnswerOptions& options) {
  const std::string model_id = options.model_id.empty() ? client.endpoint().model : options.model_id;
  std::vector<std::optional<ModelAnswer>> produced(examples.size());
  std::vector<std::optional<ItemFailure>> failed(examples.size());
  std::atomic<int> retries{0};

  parallel_for(examples.size(), options.concurrency, [&](std::size_t i) {
    const auto& ex = examples[i];
    ModelAnswer answer{ex.example_id, model_id, {}, 0};
    ChatRequest request;
    request.temperature = options.temperature;
    request.max_tokens = options.max_tokens;
    try {
      for (std::size_t t = 0; t < ex.turns.size(); ++t) {
        if (t == 0) {
          json parts = json::array();
          for (const auto& img : ex.images) parts.push_back(image_content_part(img));
          parts.push_back({{"type", "text"}, {"text", ex.turns[0]}});
          request.messages.push_back({"user", std::move(parts)});
        } else {
          request.messages.push_back({"user", ex.turns[t]});
        }
        auto completion = chat_complete(client, request);
        retries += completion.retries;
        answer.token_count += count_whitespace_tokens(completion.text);
        request.messages.push_back({"assistant", completion.text});
        answer.responses.push_back(std::move(completion.text));
      }
    } catch (const AuthError&) {
      throw;
    } catch (const ConfigError&) {
      throw;
    } catch (const Error& e) {
      failed[i] = ItemFailure{ex.example_id, "answer", e.what()};
      return;
    }
    produced[i] = std::move(answer);
  });

  AnswerRun run;
  run.retries = retries.load();
  for (std::size_t i = 0; i < examples.size(); ++i) {
    if (produced[i]) run.answers.push_back(std::move(*produced[i]));
    if (failed[i]) run.failures.push_back(std::move(*failed[i]));
  }
  return run;
}

std::string to_string(Verdict v) {
  switch (v) {
    case Verdict::kAMuchBetter: return "A>>B";
    case Verdict::kABetter: return "A>B";
    case Verdict::kTie: return "A=B";
    case Verdict::kBBetter: return "B>A";
    case Verdict::kBMuchBetter: return "B>>A";
  }
  return "A=B";
}

Verdict verdict_from_string(const std::string& s) {
  for (auto v : {Verdict::kAMuchBetter, Verdict::kABetter, Verdict::kTie, Verdict::kBBetter, Verdict::kBMuchBetter}) {
    if (to_string(v) == s) return v;
  }
  throw ParseError("unknown verdict label \"" + s + "\"");
}

Verdict mirror(Verdict v) {
  switch (v) {
    case Verdict::kAMuchBetter: return Verdict::kBMuchBetter;
    case Verdict::kABetter: return Verdict::kBBetter;
    case Verdict::kTie: return Verdict::kTie;
    case Verdict::kBBetter: return Verdict::kABetter;
    case Verdict::kBMuchBetter: return Verdict::kAMuchBetter;
  }
  return Verdict::kTie;
}

std::optional<Verdict> extract_label(std::string_view text) {
  std::optional<Verdict> last;
  for (auto open = text.find("[["); open != text.npos; open = text.find("[[", open + 2)) {
    const auto close = text.find("]]", open + 2);
    if (close == text.npos) break;
    std::string inner;
    const auto body = text.substr(open + 2, close - open - 2);
    for (std::size_t i = 0; i < body.size(); ++i) {
      if (body.substr(i).starts_with("\u226B")) {
        inner += ">>";
        i += std::string_view("\u226B").size() - 1;
      } else if (!is_space(body[i])) {
        inner.push_back(body[i]);
      }
    }
    try {
      last = verdict_from_string(inner);
    } catch (const ParseError&) {
    }
  }
  return last;
}

json to_json(const JudgeVerdict& v) {
  return {{"example_id", v.example_id}, {"model_a", v.model_a}, {"model_b", v.model_b}, {"label", to_string(v.label)},
          {"rationale", v.rationale},   {"swapped", v.swapped}, {"flagged", v.flagged}};
}

std::vector<JudgeVerdict> read_verdicts(const std::filesystem::path& path) {
  std::vector<JudgeVerdict> out;
  read_jsonl(path, [&](const json& r, std::size_t line) {
    JudgeVerdict v;
    v.example_id = require_string(r, "example_id", line);
    v.model_a = require_string(r, "model_a", line);
    v.model_b = require_string(r, "model_b", line);
    try {
      v.label = verdict_from_string(require_string(r, "label", line));
    } catch (const ParseError& e) {
      if (e.line() != 0) throw;
      throw ParseError(e.what(), line);
    }
    v.rationale = r.value("rationale", "");
    v.swapped = r.value("swapped", false);
    v.flagged = r.value("flagged", false);
    if (v.model_a == v.model_b) throw ValidationError(fmt::format("line {}: a model judged against itself", line));
    out.push_back(std::move(v));
  });
  return out;
}

void write_verdicts(const std::vector<JudgeVerdict>& verdicts, const std::filesystem::path& path) {
  std::vector<json> lines;
  for (const auto& v : verdicts) lines.push_back(to_json(v));
  write_jsonl(path, lines);
}

const std::string_view kJudgeSystemPrompt =
    "You are an impartial judge. Two assistants, A and B, answered the same sequence of questions about a set of "
    "images. Compare their complete transcripts for helpfulness, relevance and conciseness: an answer should "
    "address what was asked, stay grounded in the images, and avoid needless length. Do not let the order in which "
    "the assistants appear or the length of their answers sway you. Explain your comparison briefly, then end with "
    "exactly one verdict label:\n"
    "[[A>>B]] if assistant A is significantly better,\n"
    "[[A>B]] if assistant A is slightly better,\n"
    "[[A=B]] if they are about equal,\n"
    "[[B>A]] if assistant B is slightly better,\n"
    "[[B>>A]] if assistant B is significantly better.";

const std::string_view kJudgeReminder =
    "Your reply did not end with a verdict label. Reply with exactly one of [[A>>B]], [[A>B]], [[A=B]], [[B>A]] or "
    "[[B>>A]].";

namespace {

std::string transcript(const BenchExample& ex, const ModelAnswer& first, const ModelAnswer& second) {
  std::string out;
  for (std::size_t t = 0; t < ex.turns.size(); ++t) {
    out += fmt::format("### Turn {}\n\nQuestion:\n{}\n\n", t + 1, ex.turns[t]);
    if (ex.reference) out += fmt::format("Reference answer:\n{}\n\n", (*ex.reference)[t]);
    out += fmt::format("Assistant A:\n{}\n\nAssistant B:\n{}\n\n", first.responses[t], second.responses[t]);
  }
  out += "Compare the two assistants over the whole conversation and finish with your verdict label.";
  return out;
}

void check_answer(const BenchExample& ex, const ModelAnswer& a) {
  if (a.example_id != ex.example_id) {
    throw ValidationError("answer for \"" + a.example_id + "\" paired with example \"" + ex.example_id + "\"");
  }
  if (a.responses.size() != ex.turns.size()) {
    throw ValidationError(fmt::format("model \"{}\" gave {} responses to the {} questions of \"{}\"", a.model_id,
                                      a.responses.size(), ex.turns.size(), ex.example_id),
                          {ex.example_id});
  }
}

JudgeVerdict play(const BenchExample& ex, const ModelAnswer& first, const ModelAnswer& second, bool swapped,
                  const ApiClient& judge, const JudgeOptions& options) {
  json parts = json::array();
  for (const auto& img : ex.images) parts.push_back(image_content_part(img));
  parts.push_back({{"type", "text"}, {"text", transcript(ex, first, second)}});
  ChatRequest request;
  request.temperature = options.temperature;
  request.max_tokens = options.max_tokens;
  request.messages = {{"system", std::string(kJudgeSystemPrompt)}, {"user", std::move(parts)}};

  auto reply = chat_complete(judge, request);
  std::string rationale = reply.text;
  auto label = extract_label(reply.text);
  if (!label) {
    request.messages.push_back({"assistant", reply.text});
    request.messages.push_back({"user", std::string(kJudgeReminder)});
    reply = chat_complete(judge, request);
    rationale += "\n\n" + reply.text;
    label = extract_label(reply.text);
  }
  JudgeVerdict v;
  v.example_id = ex.example_id;
  // Canonical orientation is the caller's (answer_a, answer_b).
  v.model_a = swapped ? second.model_id : first.model_id;
  v.model_b = swapped ? first.model_id : second.model_id;
  v.flagged = !label;
  v.label = label.value_or(Verdict::kTie);
  if (swapped) v.label = mirror(v.label);
  v.rationale = std::move(rationale);
  v.swapped = swapped;
  return v;
}

}  // namespace

std::array<JudgeVerdict, 2> judge_pair(const BenchExample& example, const ModelAnswer& answer_a,
                                       const ModelAnswer& answer_b, const ApiClient& judge,
                                       const JudgeOptions& options) {
  check_answer(example, answer_a);
  check_answer(example, answer_b);
  if (answer_a.model_id == answer_b.model_id) throw ValidationError("cannot judge a model against itself");
  return {play(example, answer_a, answer_b, false, judge, options),
          play(example, answer_b, answer_a, true, judge, options)};
}

JudgeRun run_judging(const std::vector<BenchExample>& examples, const std::vector<ModelAnswer>& answers,
                     const std::string& baseline_id, const ApiClient& judge, const JudgeOptions& options) {
  std::map<std::pair<std::string, std::string>, const ModelAnswer*> index;
  std::set<std::string> models;
  for (const auto& a : answers) {
    if (!index.emplace(std::pair{a.example_id, a.model_id}, &a).second) {
      throw ValidationError("duplicate answer for (\"" + a.example_id + "\", \"" + a.model_id + "\")", {a.example_id});
    }
    if (a.model_id != baseline_id) models.insert(a.model_id);
  }
  if (std::none_of(answers.begin(), answers.end(), [&](const ModelAnswer& a) { return a.model_id == baseline_id; })) {
    throw ValidationError("no answers from the baseline \"" + baseline_id + "\"");
  }

  struct Task {
    const BenchExample* example;
    const ModelAnswer* base;
    const ModelAnswer* other;
  };
  JudgeRun run;
  std::vector<Task> tasks;
  for (const auto& ex : examples) {
    const auto base = index.find({ex.example_id, baseline_id});
    for (const auto& m : models) {
      const auto other = index.find({ex.example_id, m});
      if (base == index.end() || other == index.end()) {
        ++run.skipped;
        continue;
      }
      tasks.push_back({&ex, base->second, other->second});
    }
  }

  std::vector<std::optional<std::array<JudgeVerdict, 2>>> results(tasks.size());
  std::vector<std::optional<ItemFailure>> failed(tasks.size());
  parallel_for(tasks.size(), options.concurrency, [&](std::size_t i) {
    const auto& t = tasks[i];
    try {
      results[i] = judge_pair(*t.example, *t.base, *t.other, judge, options);
    } catch (const AuthError&) {
      throw;
    } catch (const ConfigError&) {
      throw;
    } catch (const Error& e) {
      failed[i] = ItemFailure{t.example->example_id + "/" + t.other->model_id, "judge", e.what()};
    }
  });
  for (std::size_t i = 0; i < tasks.size(); ++i) {
    if (results[i]) run.verdicts.insert(run.verdicts.end(), results[i]->begin(), results[i]->end());
    if (failed[i]) run.failures.push_back(std::move(*failed[i]));
  }
  return run;
}

std::vector<Battle> verdicts_to_battles(const std::vector<JudgeVerdict>& verdicts) {
  std::vector<Battle> out;
  out.reserve(verdicts.size());
  for (const auto& v : verdicts) {
    Battle b{v.model_a, v.model_b, 0.0, 0.0};
    switch (v.label) {
      case Verdict::kAMuchBetter: b.wins_a = 3.0; break;
      case Verdict::kABetter: b.wins_a = 1.0; break;
      case Verdict::kTie: b.wins_a = b.wins_b = 0.5; break;
      case Verdict::kBBetter: b.wins_b = 1.0; break;
      case Verdict::kBMuchBetter: b.wins_b = 3.0; break;
    }
    out.push_back(std::move(b));
  }
  return out;
}

namespace {

struct WinMatrix {
  std::vector<std::string> models;  // sorted
  std::size_t base = 0;
  std::vector<double> wins;  // wins[i * m + j]: weighted wins of i over j

  std::size_t size() const { return models.size(); }
  double& at(std::size_t i, std::size_t j) { return wins[i * models.size() + j]; }
  double at(std::size_t i, std::size_t j) const { return wins[i * models.size() + j]; }
};

WinMatrix tabulate(const std::vector<std::string>& models, const std::vector<Battle>& battles,
                   const std::string& baseline_id) {
  WinMatrix w;
  w.models = models;
  const auto base = std::find(w.models.begin(), w.models.end(), baseline_id);
  if (base == w.models.end()) throw ValidationError("baseline \"" + baseline_id + "\" has no battles");
  w.base = static_cast<std::size_t>(base - w.models.begin());
  w.wins.assign(w.size() * w.size(), 0.0);
  std::unordered_map<std::string, std::size_t> pos;
  for (std::size_t i = 0; i < w.size(); ++i) pos.emplace(w.models[i], i);
  for (const auto& b : battles) {
    if (b.model_a == b.model_b) throw ValidationError("battle of \"" + b.model_a + "\" against itself");
    if (!(b.wins_a >= 0.0) || !(b.wins_b >= 0.0)) throw DomainError("negative or NaN battle weight");
    const std::size_t i = pos.at(b.model_a);
    const std::size_t j = pos.at(b.model_b);
    w.at(i, j) += b.wins_a;
    w.at(j, i) += b.wins_b;
  }
  return w;
}

void check_connected(const WinMatrix& w) {
  const std::size_t m = w.size();
  std::vector<bool> seen(m, false);
  std::vector<std::size_t> stack{w.base};
  seen[w.base] = true;
  while (!stack.empty()) {
    const std::size_t i = stack.back();
    stack.pop_back();
    for (std::size_t j = 0; j < m; ++j) {
      if (!seen[j] && w.at(i, j) + w.at(j, i) > 0.0) {
        seen[j] = true;
        stack.push_back(j);
      }
    }
  }
  std::vector<std::string> unreachable;
  for (std::size_t i = 0; i < m; ++i) {
    if (!seen[i]) unreachable.push_back(w.models[i]);
  }
  if (!unreachable.empty()) {
    std::string names;
    for (const auto& n : unreachable) names += (names.empty() ? "\"" : ", \"") + n + "\"";
    throw ValidationError("comparison graph is disconnected; not reachable from the baseline: " + names,
                          unreachable);
  }
}

// Minorization-maximization (Hunter 2004) in strength space, baseline pinned to 1.
std::vector<double> solve(WinMatrix w, const FitOptions& o) {
  const std::size_t m = w.size();
  for (std::size_t i = 0; i < m; ++i) {
    if (i == w.base) continue;
    w.at(i, w.base) += o.pseudo_count;
    w.at(w.base, i) += o.pseudo_count;
  }
  std::vector<double> total_wins(m, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < m; ++j) total_wins[i] += w.at(i, j);
  }
  if (!(total_wins[w.base] > 0.0)) throw DomainError("the baseline never wins; its strength is not identifiable");

  std::vector<double> p(m, 1.0), next(m, 1.0);
  for (int iter = 0; iter < o.max_iterations; ++iter) {
    for (std::size_t i = 0; i < m; ++i) {
      double denom = 0.0;
      for (std::size_t j = 0; j < m; ++j) {
        if (j == i) continue;
        const double games = w.at(i, j) + w.at(j, i);
        if (games > 0.0) denom += games / (p[i] + p[j]);
      }
      next[i] = denom > 0.0 ? total_wins[i] / denom : p[i];
    }
    const double scale = next[w.base];
    bool converged = true;
    for (std::size_t i = 0; i < m; ++i) {
      next[i] = i == w.base ? 1.0 : next[i] / scale;
      const double ref = std::max(p[i], next[i]);
      if (ref > 0.0 && std::abs(next[i] - p[i]) > o.tolerance * ref) converged = false;
    }
    p.swap(next);
    if (converged) return p;
  }
  throw Error(fmt::format("Bradley-Terry fit did not converge in {} iterations", o.max_iterations));
}

std::vector<std::string> model_set(const std::vector<Battle>& battles) {
  std::set<std::string> s;
  for (const auto& b : battles) {
    s.insert(b.model_a);
    s.insert(b.model_b);
  }
  return {s.begin(), s.end()};
}

std::map<std::string, double> as_map(const WinMatrix& w, const std::vector<double>& p) {
  std::map<std::string, double> out;
  for (std::size_t i = 0; i < w.size(); ++i) out.emplace(w.models[i], p[i]);
  return out;
}

}  // namespace

std::map<std::string, double> fit_strengths(const std::vector<Battle>& battles, const std::string& baseline_id,
                                            const FitOptions& options) {
  if (!(options.pseudo_count >= 0.0)) throw ConfigError("pseudo_count must be >= 0");
  const auto w = tabulate(model_set(battles), battles, baseline_id);
  check_connected(w);
  return as_map(w, solve(w, options));
}

std::map<std::string, double> fit_bradley_terry(const std::vector<Battle>& battles, const std::string& baseline_id,
                                                const FitOptions& options) {
  auto out = fit_strengths(battles, baseline_id, options);
  for (auto& [model, p] : out) p = model == baseline_id ? 0.0 : std::log(p);
  return out;
}

double bt_score(double beta) { return strength_score(std::exp(beta)); }

double strength_score(double p) { return 100.0 * p / (p + 1.0); }

double quantile(const std::vector<double>& sorted, double q) {
  if (sorted.empty()) throw DomainError("quantile of an empty sample");
  if (!(q >= 0.0 && q <= 1.0)) throw DomainError("quantile level outside [0, 1]");
  const double h = static_cast<double>(sorted.size() - 1) * q;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  if (lo + 1 >= sorted.size()) return sorted.back();
  return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[lo + 1] - sorted[lo]);
}

std::map<std::string, CiDelta> bootstrap_ci(const std::vector<Battle>& battles, const std::string& baseline_id,
                                            std::size_t rounds, std::uint64_t seed, std::size_t concurrency,
                                            const FitOptions& options) {
  if (rounds < 100) throw DomainError("bootstrap needs at least 100 rounds");
  if (battles.empty()) throw DomainError("bootstrap over an empty battle set");
  const auto models = model_set(battles);
  const auto full = tabulate(models, battles, baseline_id);
  check_connected(full);
  const auto point = solve(full, options);

  // A resample may leave a model without real battles; the pseudo-battles keep
  // it connected, so connectivity is only required of the full set.
  std::vector<std::vector<double>> scores(models.size(), std::vector<double>(rounds));
  parallel_for(rounds, concurrency, [&](std::size_t r) {
    Rng rng(derive_seed(seed, {r}));
    std::vector<Battle> sample;
    sample.reserve(battles.size());
    for (std::size_t i = 0; i < battles.size(); ++i) sample.push_back(battles[rng.below(battles.size())]);
    const auto p = solve(tabulate(models, sample, baseline_id), options);
    for (std::size_t m = 0; m < models.size(); ++m) scores[m][r] = strength_score(p[m]);
  });

  std::map<std::string, CiDelta> out;
  for (std::size_t m = 0; m < models.size(); ++m) {
    if (models[m] == baseline_id) {
      out.emplace(models[m], CiDelta{0.0, 0.0});
      continue;
    }
    auto& s = scores[m];
    std::sort(s.begin(), s.end());
    const double centre = strength_score(point[m]);
    out.emplace(models[m], CiDelta{quantile(s, 0.025) - centre, quantile(s, 0.975) - centre});
  }
  return out;
}

Leaderboard build_leaderboard(const std::map<std::string, double>& scores, const std::map<std::string, CiDelta>& cis,
                              const std::vector<ModelAnswer>& answers, const std::string& baseline_id,
                              const std::map<std::string, std::string>& delta_refs) {
  if (!scores.contains(baseline_id)) throw ValidationError("baseline \"" + baseline_id + "\" has no score");
  std::map<std::string, std::pair<double, std::size_t>> tokens;
  for (const auto& a : answers) {
    auto& t = tokens[a.model_id];
    t.first += static_cast<double>(a.token_count);
    ++t.second;
  }
  std::vector<std::string> problems;
  for (const auto& [model, _] : scores) {
    if (!cis.contains(model)) problems.push_back("\"" + model + "\" has no confidence interval");
    if (!tokens.contains(model)) problems.push_back("\"" + model + "\" has no answers");
  }
  for (const auto& [model, _] : tokens) {
    if (!scores.contains(model)) problems.push_back("\"" + model + "\" has answers but no score");
  }
  for (const auto& [model, ref] : delta_refs) {
    if (!scores.contains(model) || !scores.contains(ref)) {
      problems.push_back("delta reference \"" + model + "\" -> \"" + ref + "\" names an unscored model");
    }
  }
  if (!problems.empty()) {
    std::string msg = "inconsistent leaderboard inputs:";
    for (const auto& p : problems) msg += " " + p + ";";
    msg.pop_back();
    throw ValidationError(msg);
  }

  Leaderboard board{baseline_id, {}};
  for (const auto& [model, score] : scores) {
    LeaderboardRow row;
    row.model_id = model;
    row.score = model == baseline_id ? 50.0 : score;
    if (model != baseline_id) {
      row.ci_low_delta = cis.at(model).low;
      row.ci_high_delta = cis.at(model).high;
    }
    const auto& t = tokens.at(model);
    row.avg_tokens = std::lround(t.first / static_cast<double>(t.second));
    if (auto it = delta_refs.find(model); it != delta_refs.end()) {
      const double ref = it->second == baseline_id ? 50.0 : scores.at(it->second);
      row.delta = row.score - ref;
    }
    board.rows.push_back(std::move(row));
  }
  std::stable_sort(board.rows.begin(), board.rows.end(), [](const LeaderboardRow& a, const LeaderboardRow& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.model_id < b.model_id;
  });
  return board;
}

std::vector<json> leaderboard_records(const Leaderboard& board) {
  std::vector<json> out;
  for (std::size_t i = 0; i < board.rows.size(); ++i) {
    const auto& r = board.rows[i];
    json j = {{"rank", i + 1},
              {"model_id", r.model_id},
              {"score", r.score},
              {"ci_low_delta", r.ci_low_delta},
              {"ci_high_delta", r.ci_high_delta},
              {"avg_tokens", r.avg_tokens},
              {"baseline", r.model_id == board.baseline_id}};
    if (r.delta) j["delta"] = *r.delta;
    out.push_back(std::move(j));
  }
  return out;
}

namespace {

std::string one_decimal(double x) {
  auto s = fmt::format("{:.1f}", x);
  if (s == "-0.0") s = "0.0";
  return s;
}

std::size_t display_width(std::string_view s) {
  std::size_t n = 0;
  for (unsigned char c : s) n += (c & 0xC0) != 0x80;
  return n;
}

std::string pad(std::string_view s, std::size_t width, bool left) {
  const std::string fill(width - std::min(width, display_width(s)), ' ');
  return left ? std::string(s) + fill : fill + std::string(s);
}

}  // namespace

std::string leaderboard_table(const Leaderboard& board) {
  const std::vector<std::string> header = {"Model Name", "Score", "\u0394", "95% CI", "Average Tokens"};
  std::vector<std::vector<std::string>> cells;
  for (const auto& r : board.rows) {
    std::string delta = "--";
    if (r.delta) {
      delta = one_decimal(*r.delta);
      if (delta.front() != '-') delta.insert(0, "+");
      delta += "%";
    }
    cells.push_back({r.model_id, one_decimal(r.score), delta,
                     "(" + one_decimal(r.ci_low_delta) + ", " + one_decimal(r.ci_high_delta) + ")",
                     std::to_string(r.avg_tokens)});
  }
  std::vector<std::size_t> width(header.size());
  for (std::size_t c = 0; c < header.size(); ++c) {
    width[c] = display_width(header[c]);
    for (const auto& row : cells) width[c] = std::max(width[c], display_width(row[c]));
  }
  auto line = [&](const std::vector<std::string>& row) {
    std::string out;
    for (std::size_t c = 0; c < row.size(); ++c) {
      if (c > 0) out += " | ";
      out += pad(row[c], width[c], c == 0);
    }
    return rtrim(out) == out ? out + "\n" : std::string(rtrim(out)) + "\n";
  };
  std::string out = line(header);
  for (std::size_t c = 0; c < header.size(); ++c) {
    if (c > 0) out += "-|-";
    out += std::string(width[c], '-');
  }
  out += "\n";
  for (const auto& row : cells) out += line(row);
  return out;
}

}  // namespace multimage
