#include "multimage/datastats.hpp"

#include <algorithm>
#include <fstream>
#include <iterator>
#include <unordered_set>

#include <fmt/format.h>
#include <fmt/ranges.h>

#include "multimage/error.hpp"
#include "multimage/text.hpp"

namespace multimage {

json ValidationReport::to_json() const {
  json v = json::array();
  for (const auto& x : violations) v.push_back({{"line", x.line}, {"id", x.id}, {"message", x.message}});
  return {{"lines", lines}, {"valid", valid}, {"violations", std::move(v)}};
}

ValidationReport validate_dataset(const std::filesystem::path& path, bool strict, const TurnBounds& bounds) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  ValidationReport report;
  std::unordered_set<std::string> seen;
  std::size_t line_no = 0;
  for (std::string line; std::getline(in, line);) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (trim(line).empty()) continue;
    ++report.lines;
    Conversation conv;
    try {
      const auto record = json::parse(null_nonfinite_literals(line));
      if (!record.is_object()) throw ParseError("not a JSON object", line_no);
      conv = conversation_from_json(record, line_no);
    } catch (const json::exception& e) {
      report.violations.push_back({line_no, "", std::string("invalid JSON: ") + e.what()});
      continue;
    } catch (const ParseError& e) {
      report.violations.push_back({line_no, "", e.what()});
      continue;
    }
    const std::size_t before = report.violations.size();
    if (!seen.insert(conv.id).second) report.violations.push_back({line_no, conv.id, "duplicate id"});
    TurnBounds effective = bounds;
    if (!strict) effective = {0, static_cast<std::size_t>(-1)};
    for (auto& problem : conversation_problems(conv, effective)) {
      const bool placeholder_rule = problem.find("placeholder") != std::string::npos;
      if (!strict && placeholder_rule) continue;
      report.violations.push_back({line_no, conv.id, std::move(problem)});
    }
    if (report.violations.size() == before) ++report.valid;
  }
  return report;
}

std::size_t count_whitespace_tokens(std::string_view text) {
  std::size_t n = 0;
  bool in_token = false;
  for (char c : text) {
    const bool space = is_space(c);
    if (!space && !in_token) ++n;
    in_token = !space;
  }
  return n;
}

TokenCounter token_counter(const std::string& name) {
  if (name == "whitespace") return {name, count_whitespace_tokens};
  throw ConfigError("unknown token counter \"" + name + "\" (available: whitespace)");
}

std::size_t turn_tokens(const TokenCounter& counter, std::string_view content) {
  std::string stripped;
  stripped.reserve(content.size());
  std::size_t from = 0;
  for (auto pos = content.find(kImagePlaceholder); pos != content.npos; pos = content.find(kImagePlaceholder, from)) {
    stripped.append(content.substr(from, pos - from));
    stripped.push_back(' ');
    from = pos + kImagePlaceholder.size();
  }
  stripped.append(content.substr(from));
  return counter.count(stripped);
}

json DatasetStats::to_json() const {
  return {{"num_samples", num_samples},
          {"max_turns", max_turns},
          {"min_turns", min_turns},
          {"avg_turns", avg_turns},
          {"avg_images", avg_images},
          {"avg_user_tokens", avg_user_tokens},
          {"avg_assistant_tokens", avg_assistant_tokens},
          {"token_counter", token_counter},
          {"models", models},
          {"totals",
           {{"turns", total_turns},
            {"images", total_images},
            {"user_turns", user_turns},
            {"assistant_turns", assistant_turns},
            {"user_tokens", user_tokens},
            {"assistant_tokens", assistant_tokens}}}};
}

StatsAccumulator::StatsAccumulator(TokenCounter counter) : counter_(std::move(counter)) {
  totals_.token_counter = counter_.name;
}

void StatsAccumulator::add(const Conversation& conv) {
  auto& t = totals_;
  const std::size_t turns = conv.turns.size();
  t.max_turns = t.num_samples == 0 ? turns : std::max(t.max_turns, turns);
  t.min_turns = t.num_samples == 0 ? turns : std::min(t.min_turns, turns);
  ++t.num_samples;
  t.total_turns += turns;
  t.total_images += conv.images.size();
  if (!std::binary_search(t.models.begin(), t.models.end(), conv.model)) {
    t.models.insert(std::upper_bound(t.models.begin(), t.models.end(), conv.model), conv.model);
  }
  for (const auto& turn : conv.turns) {
    const std::size_t n = turn_tokens(counter_, turn.content);
    if (turn.role == Role::kUser) {
      ++t.user_turns;
      t.user_tokens += n;
    } else {
      ++t.assistant_turns;
      t.assistant_tokens += n;
    }
  }
}

void StatsAccumulator::merge(const StatsAccumulator& other) {
  if (other.counter_.name != counter_.name) throw ConfigError("cannot merge stats from different token counters");
  const auto& o = other.totals_;
  if (o.num_samples == 0) return;
  auto& t = totals_;
  t.max_turns = t.num_samples == 0 ? o.max_turns : std::max(t.max_turns, o.max_turns);
  t.min_turns = t.num_samples == 0 ? o.min_turns : std::min(t.min_turns, o.min_turns);
  t.num_samples += o.num_samples;
  t.total_turns += o.total_turns;
  t.total_images += o.total_images;
  t.user_turns += o.user_turns;
  t.assistant_turns += o.assistant_turns;
  t.user_tokens += o.user_tokens;
  t.assistant_tokens += o.assistant_tokens;
  std::vector<std::string> models;
  std::set_union(t.models.begin(), t.models.end(), o.models.begin(), o.models.end(), std::back_inserter(models));
  t.models = std::move(models);
}

DatasetStats StatsAccumulator::finish() const {
  if (totals_.num_samples == 0) throw DomainError("statistics of an empty dataset");
  DatasetStats s = totals_;
  const auto ratio = [](std::size_t num, std::size_t den) {
    return den == 0 ? 0.0 : static_cast<double>(num) / static_cast<double>(den);
  };
  s.avg_turns = ratio(s.total_turns, s.num_samples);
  s.avg_images = ratio(s.total_images, s.num_samples);
  s.avg_user_tokens = ratio(s.user_tokens, s.user_turns);
  s.avg_assistant_tokens = ratio(s.assistant_tokens, s.assistant_turns);
  return s;
}

DatasetStats compute_stats(const std::vector<Conversation>& convs, const TokenCounter& counter) {
  StatsAccumulator acc(counter);
  for (const auto& c : convs) acc.add(c);
  return acc.finish();
}

DatasetStats compute_stats(const std::filesystem::path& path, const TokenCounter& counter) {
  StatsAccumulator acc(counter);
  read_jsonl(path, [&](const json& r, std::size_t line) { acc.add(conversation_from_json(r, line)); });
  return acc.finish();
}

std::string stats_table(const DatasetStats& s) {
  const std::string values[] = {
      fmt::format("{}", s.num_samples),           fmt::format("{}", s.max_turns),
      fmt::format("{}", s.min_turns),             fmt::format("{:.2f}", s.avg_turns),
      fmt::format("{:.2f}", s.avg_images),        fmt::format("{:.2f}", s.avg_user_tokens),
      fmt::format("{:.2f}", s.avg_assistant_tokens), fmt::format("{}", fmt::join(s.models, ", ")),
  };
  std::size_t label_width = std::string_view("Statistic").size();
  std::size_t value_width = std::string_view("Value").size();
  for (std::size_t i = 0; i < std::size(kStatsRowLabels); ++i) {
    label_width = std::max(label_width, kStatsRowLabels[i].size());
    value_width = std::max(value_width, values[i].size());
  }
  std::string out = fmt::format("{:<{}} | {:>{}}\n", "Statistic", label_width, "Value", value_width);
  out += std::string(label_width, '-') + "-|-" + std::string(value_width, '-') + "\n";
  for (std::size_t i = 0; i < std::size(kStatsRowLabels); ++i) {
    out += fmt::format("{:<{}} | {:>{}}\n", kStatsRowLabels[i], label_width, values[i], value_width);
  }
  out += "Tokens counted with the \"" + s.token_counter + "\" counter; image placeholders excluded.\n";
  return out;
}

}  // namespace multimage
