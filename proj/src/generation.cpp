#include "multimage/generation.hpp"

#include <algorithm>
#include <atomic>
#include <fstream>
#include <mutex>
#include <unordered_map>
#include <unordered_set>

#include <fmt/core.h>

#include "multimage/hash.hpp"
#include "multimage/log.hpp"
#include "multimage/parallel.hpp"
#include "multimage/rng.hpp"
#include "multimage/text.hpp"

namespace multimage {

std::string to_string(TemplateName name) { return name == TemplateName::kLlavaStyle ? "llava_style" : "long_form"; }

TemplateName template_from_string(const std::string& s) {
  if (s == "llava_style") return TemplateName::kLlavaStyle;
  if (s == "long_form") return TemplateName::kLongForm;
  throw ParseError("unknown template \"" + s + "\" (expected llava_style or long_form)");
}

std::string to_string(Role role) { return role == Role::kUser ? "user" : "assistant"; }

Role role_from_string(const std::string& s) {
  if (s == "user") return Role::kUser;
  if (s == "assistant") return Role::kAssistant;
  throw ParseError("unknown role \"" + s + "\"");
}

namespace {

constexpr std::string_view kUserWord = "User";
constexpr std::string_view kAssistantWord = "Assistant";

bool at_boundary(std::string_view s, std::size_t i) { return i == 0 || !is_alnum(s[i - 1]); }

std::size_t dialogue_label(std::string_view s, std::size_t i) {
  const auto rest = s.substr(i);
  if (rest.starts_with(kUserWord)) return kUserWord.size();
  if (rest.starts_with(kAssistantWord)) return kAssistantWord.size();
  return 0;
}

std::size_t caption_label(std::string_view s, std::size_t i) {
  if (auto n = dialogue_label(s, i)) return n;
  constexpr std::string_view kImage = "Image ";
  if (!s.substr(i).starts_with(kImage)) return 0;
  std::size_t j = i + kImage.size();
  while (j < s.size() && s[j] >= '0' && s[j] <= '9') ++j;
  return j > i + kImage.size() ? j - i : 0;
}

// Adds (delta = +1) or removes (delta = -1) one backslash between every
// boundary label and its colon.
std::string requote(std::string_view s, std::size_t (*label)(std::string_view, std::size_t), int delta) {
  std::string out;
  out.reserve(s.size() + 8);
  std::size_t i = 0;
  while (i < s.size()) {
    const std::size_t len = at_boundary(s, i) ? label(s, i) : 0;
    if (len > 0) {
      std::size_t j = i + len;
      std::size_t slashes = 0;
      while (j < s.size() && s[j] == '\\') ++j, ++slashes;
      if (j < s.size() && s[j] == ':' && (delta > 0 || slashes > 0)) {
        out.append(s.substr(i, len));
        out.append(delta > 0 ? slashes + 1 : slashes - 1, '\\');
        out.push_back(':');
        i = j + 1;
        continue;
      }
    }
    out.push_back(s[i]);
    ++i;
  }
  return out;
}

}  // namespace

std::string escape_markers(std::string_view text) { return requote(text, dialogue_label, +1); }
std::string unescape_markers(std::string_view text) { return requote(text, dialogue_label, -1); }
std::string escape_caption(std::string_view text) { return requote(text, caption_label, +1); }
std::string unescape_caption(std::string_view text) { return requote(text, caption_label, -1); }

std::string render_prompt(const PromptTemplate& tmpl, const std::vector<std::string>& captions) {
  if (captions.size() < 2 || captions.size() > 8) {
    throw ValidationError(fmt::format("a prompt takes 2 to 8 captions, got {}", captions.size()));
  }
  std::string out(tmpl.body);
  out += "\n\n";
  for (std::size_t i = 0; i < captions.size(); ++i) {
    if (trim(captions[i]).empty()) throw ValidationError(fmt::format("caption {} is empty", i + 1));
    if (i > 0) out += '\n';
    out += fmt::format("Image {}: ", i + 1);
    out += escape_caption(captions[i]);
  }
  return out;
}

std::vector<std::string> extract_captions(const PromptTemplate& tmpl, std::string_view prompt) {
  const std::string head = std::string(tmpl.body) + "\n\nImage 1: ";
  if (!prompt.starts_with(head)) throw ParseError("prompt was not rendered from the " + to_string(tmpl.name) + " template");
  std::vector<std::string> captions;
  std::size_t start = head.size();
  for (std::size_t next = 2;; ++next) {
    const std::string label = fmt::format("\nImage {}: ", next);
    const auto end = prompt.find(label, start);
    captions.push_back(unescape_caption(prompt.substr(start, end == std::string_view::npos ? prompt.npos : end - start)));
    if (end == std::string_view::npos) break;
    start = end + label.size();
  }
  return captions;
}

std::string emit_dialogue(const std::vector<Turn>& turns) {
  if (turns.empty() || turns.size() % 2 != 0) throw ValidationError("a dialogue needs complete user/assistant pairs");
  std::string out;
  for (std::size_t i = 0; i < turns.size(); i += 2) {
    if (turns[i].role != Role::kUser || turns[i + 1].role != Role::kAssistant) {
      throw ValidationError(fmt::format("turn {} breaks user/assistant alternation", i + 1));
    }
    if (trim(turns[i].content).empty() || trim(turns[i + 1].content).empty()) {
      throw ValidationError(fmt::format("blank turn in pair {}", i / 2 + 1));
    }
    if (i > 0) out += '\n';
    out += "User: ";
    out += escape_markers(turns[i].content);
    out += ", Assistant: ";
    out += escape_markers(turns[i + 1].content);
  }
  return out;
}

namespace {

struct Marker {
  std::size_t pos;
  std::size_t end;
  Role role;
};

std::vector<Marker> find_markers(std::string_view s) {
  std::vector<Marker> out;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (!at_boundary(s, i)) continue;
    const std::size_t len = dialogue_label(s, i);
    if (len == 0 || i + len >= s.size() || s[i + len] != ':') continue;
    out.push_back({i, i + len + 1, len == kUserWord.size() ? Role::kUser : Role::kAssistant});
    i += len;
  }
  return out;
}

}  // namespace

ParsedDialogue parse_dialogue(std::string_view raw, ParseMode mode) {
  const auto markers = find_markers(raw);
  const auto first = std::find_if(markers.begin(), markers.end(), [](const Marker& m) { return m.role == Role::kUser; });
  if (first == markers.end()) throw DialogueError(DialogueError::Kind::kUnparseable, "no \"User:\" marker in completion");

  // An opening quote before the first marker pairs with a closing one at the end.
  const bool quoted = rtrim(raw.substr(0, first->pos)).ends_with('"');

  ParsedDialogue result;
  std::string problem;
  std::vector<Turn> turns;
  for (auto it = first; it != markers.end(); ++it) {
    const Role expected = turns.size() % 2 == 0 ? Role::kUser : Role::kAssistant;
    const auto next = std::next(it);
    const std::size_t stop = next == markers.end() ? raw.size() : next->pos;
    std::string_view content = trim(raw.substr(it->end, stop - it->end));
    if (it->role == Role::kUser && next != markers.end() && next->role == Role::kAssistant && content.ends_with(',')) {
      content = rtrim(content.substr(0, content.size() - 1));
    }
    if (next == markers.end() && quoted && content.ends_with('"')) {
      content = rtrim(content.substr(0, content.size() - 1));
    }
    if (it->role != expected) {
      problem = fmt::format("turn {}: expected {} marker, found {}", turns.size() + 1, to_string(expected),
                            to_string(it->role));
      break;
    }
    if (content.empty()) {
      problem = fmt::format("turn {}: empty {} turn", turns.size() + 1, to_string(it->role));
      break;
    }
    turns.push_back({it->role, unescape_markers(content)});
  }
  if (problem.empty() && turns.size() % 2 != 0) {
    problem = fmt::format("turn {}: question without an answer", turns.size());
  }
  if (!problem.empty()) {
    if (mode == ParseMode::kStrict) throw DialogueError(DialogueError::Kind::kTruncated, "malformed dialogue: " + problem);
    turns.resize(turns.size() - turns.size() % 2);
    if (turns.empty()) throw DialogueError(DialogueError::Kind::kTruncated, "no complete turn pair: " + problem);
    result.warnings.push_back("dropped malformed tail after " + std::to_string(turns.size()) + " turns: " + problem);
  }
  result.turns = std::move(turns);
  return result;
}

namespace {

std::size_t count_placeholders(std::string_view s) {
  std::size_t n = 0;
  for (auto pos = s.find(kImagePlaceholder); pos != s.npos; pos = s.find(kImagePlaceholder, pos + 1)) ++n;
  return n;
}

std::string placeholder_prefix(std::size_t n) {
  std::string out;
  for (std::size_t i = 0; i < n; ++i) {
    out += kImagePlaceholder;
    out += '\n';
  }
  return out;
}

}  // namespace

std::vector<std::string> conversation_problems(const Conversation& conv, const TurnBounds& bounds) {
  std::vector<std::string> problems;
  if (conv.id.empty()) problems.push_back("empty id");
  if (conv.images.empty()) problems.push_back("no images");
  const std::size_t n = conv.turns.size();
  if (n < bounds.min_turns || n > bounds.max_turns) {
    problems.push_back(fmt::format("{} turns, outside [{}, {}]", n, bounds.min_turns, bounds.max_turns));
  }
  for (std::size_t i = 0; i < n; ++i) {
    const Role expected = i % 2 == 0 ? Role::kUser : Role::kAssistant;
    if (conv.turns[i].role != expected) {
      problems.push_back(fmt::format("turn {} is {}, expected {}", i + 1, to_string(conv.turns[i].role),
                                     to_string(expected)));
      break;
    }
  }
  if (n > 0 && conv.turns.back().role != Role::kAssistant) problems.push_back("last turn is not the assistant's");
  std::size_t placeholders = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (trim(conv.turns[i].content).empty()) problems.push_back(fmt::format("turn {} is blank", i + 1));
    placeholders += count_placeholders(conv.turns[i].content);
  }
  if (placeholders != conv.images.size()) {
    problems.push_back(fmt::format("{} image placeholders for {} images", placeholders, conv.images.size()));
  } else if (n > 0 && !conv.turns.front().content.starts_with(placeholder_prefix(conv.images.size()))) {
    problems.push_back("image placeholders are not at the start of the first turn");
  }
  return problems;
}

Conversation assemble_sample(const ImageGroup& group, std::vector<std::string> image_refs, std::vector<Turn> turns,
                             TemplateName template_name, const std::string& model, const TurnBounds& bounds) {
  if (image_refs.size() != group.member_ids.size()) {
    throw ValidationError(fmt::format("group \"{}\" has {} members but {} image references", group.group_id,
                                      group.member_ids.size(), image_refs.size()),
                          {group.group_id});
  }
  Conversation conv{"conv_" + group.group_id, group.group_id, std::move(image_refs), std::move(turns), template_name,
                    model, json::object()};
  if (!conv.turns.empty() && conv.turns.front().role == Role::kUser) {
    conv.turns.front().content.insert(0, placeholder_prefix(conv.images.size()));
  }
  const auto problems = conversation_problems(conv, bounds);
  if (!problems.empty()) {
    std::string msg = "cannot assemble \"" + conv.id + "\":";
    for (const auto& p : problems) msg += " " + p + ";";
    msg.pop_back();
    throw ValidationError(msg, {group.group_id});
  }
  return conv;
}

json to_json(const Conversation& conv) {
  json turns = json::array();
  for (const auto& t : conv.turns) turns.push_back({{"role", to_string(t.role)}, {"content", t.content}});
  json j = {{"id", conv.id},
            {"group_id", conv.group_id},
            {"images", conv.images},
            {"template", to_string(conv.template_name)},
            {"model", conv.model},
            {"conversations", std::move(turns)}};
  if (!conv.metadata.empty()) j["metadata"] = conv.metadata;
  return j;
}

Conversation conversation_from_json(const json& r, std::size_t line) {
  Conversation c;
  c.id = require_string(r, "id", line);
  c.group_id = require_string(r, "group_id", line);
  c.images = require_string_list(r, "images", line);
  try {
    c.template_name = template_from_string(require_string(r, "template", line));
  } catch (const ParseError& e) {
    if (e.line() != 0) throw;
    throw ParseError(e.what(), line);
  }
  c.model = require_string(r, "model", line);
  const auto& turns = require_field(r, "conversations", line);
  if (!turns.is_array()) throw ParseError("field \"conversations\" must be an array", line);
  for (std::size_t i = 0; i < turns.size(); ++i) {
    const auto& t = turns[i];
    if (!t.is_object()) throw ParseError(fmt::format("conversations[{}] must be an object", i), line);
    const auto role = require_string(t, "role", line);
    Turn turn;
    try {
      turn.role = role_from_string(role);
    } catch (const ParseError& e) {
      throw ParseError(fmt::format("conversations[{}]: {}", i, e.what()), line);
    }
    turn.content = require_string(t, "content", line);
    c.turns.push_back(std::move(turn));
  }
  if (auto it = r.find("metadata"); it != r.end()) {
    if (!it->is_object()) throw ParseError("field \"metadata\" must be an object", line);
    c.metadata = *it;
  }
  return c;
}

std::vector<Conversation> read_conversations(const std::filesystem::path& path) {
  std::vector<Conversation> out;
  read_jsonl(path, [&](const json& r, std::size_t line) { out.push_back(conversation_from_json(r, line)); });
  return out;
}

void write_conversations(const std::vector<Conversation>& convs, const std::filesystem::path& path) {
  std::vector<json> lines;
  lines.reserve(convs.size());
  for (const auto& c : convs) lines.push_back(to_json(c));
  write_jsonl(path, lines);
}

std::filesystem::path failures_path(const std::filesystem::path& out) {
  auto p = out;
  p += ".failures.jsonl";
  return p;
}

namespace {

// Loads the conversations already written by an earlier, possibly interrupted
// run. A torn final line is what a crash mid-append leaves behind; it is
// dropped. Damage anywhere else is an error.
std::vector<Conversation> load_resumable(const std::filesystem::path& out) {
  std::vector<Conversation> done;
  if (!std::filesystem::exists(out)) return done;
  std::ifstream in(out, std::ios::binary);
  if (!in) throw IoError("cannot read " + out.string());
  std::vector<std::string> lines;
  for (std::string line; std::getline(in, line);) {
    if (!trim(line).empty()) lines.push_back(std::move(line));
  }
  for (std::size_t i = 0; i < lines.size(); ++i) {
    try {
      done.push_back(conversation_from_json(json::parse(lines[i]), i + 1));
    } catch (const std::exception& e) {
      if (i + 1 != lines.size()) throw ParseError(std::string("cannot resume from ") + out.string() + ": " + e.what(), i + 1);
      log::warn("dropping torn final record of {}", out.string());
    }
  }
  return done;
}

}  // namespace

GenerationReport run_generation_batch(const std::vector<ImageGroup>& groups,
                                      const std::vector<ImageCaptionPair>& corpus, const ApiClient& client,
                                      const GenerationOptions& options, const std::filesystem::path& out) {
  if (groups.empty()) throw ConfigError("no groups to generate from");
  std::unordered_map<std::string, const ImageCaptionPair*> by_id;
  for (const auto& p : corpus) by_id.emplace(p.id, &p);
  std::vector<std::string> missing;
  std::unordered_set<std::string> group_ids;
  for (const auto& g : groups) {
    if (!group_ids.insert(g.group_id).second) throw ValidationError("duplicate group id \"" + g.group_id + "\"", {g.group_id});
    for (const auto& id : g.member_ids) {
      if (!by_id.contains(id)) missing.push_back(id);
    }
  }
  if (!missing.empty()) {
    throw ValidationError(fmt::format("{} group member(s) missing from the corpus, e.g. \"{}\"", missing.size(),
                                      missing.front()),
                          missing);
  }

  GenerationReport report;
  auto done = load_resumable(out);
  std::unordered_map<std::string, Conversation> finished;
  for (const auto& c : done) finished.emplace(c.group_id, c);
  // Rewrite first so appends never land after a torn line.
  write_conversations(done, out);

  std::vector<std::size_t> todo;
  for (std::size_t i = 0; i < groups.size(); ++i) {
    if (finished.contains(groups[i].group_id)) {
      ++report.resumed;
    } else {
      todo.push_back(i);
    }
  }
  report.requested = todo.size();
  if (report.resumed > 0) log::info("resuming: {} of {} groups already done", report.resumed, groups.size());

  const auto& tmpl = prompt_template(options.template_name);
  const std::string& model = client.endpoint().model;
  JsonlAppender appender(out);
  std::vector<std::optional<Conversation>> produced(todo.size());
  std::vector<std::optional<ItemFailure>> failed(todo.size());
  std::atomic<int> retries{0};

  parallel_for(todo.size(), options.concurrency, [&](std::size_t t) {
    const auto& group = groups[todo[t]];
    std::vector<std::string> captions;
    std::vector<std::string> images;
    for (const auto& id : group.member_ids) {
      captions.push_back(by_id.at(id)->caption);
      images.push_back(by_id.at(id)->image_ref);
    }
    ChatRequest request;
    request.temperature = options.temperature;
    request.top_p = options.top_p;
    request.max_tokens = options.max_tokens;
    request.seed = derive_seed(options.seed, {fnv1a64(group.group_id)});
    ChatCompletion completion;
    try {
      request.messages = {{"system", render_prompt(tmpl, captions)}, {"user", std::string(kGenerationInstruction)}};
      completion = chat_complete(client, request);
      retries += completion.retries;
    } catch (const AuthError&) {
      throw;
    } catch (const ConfigError&) {
      throw;
    } catch (const Error& e) {
      failed[t] = ItemFailure{group.group_id, "request", e.what()};
      return;
    }
    try {
      auto parsed = parse_dialogue(completion.text, options.mode);
      auto conv = assemble_sample(group, std::move(images), std::move(parsed.turns), options.template_name, model,
                                  options.bounds);
      conv.metadata = {{"temperature", options.temperature},
                       {"top_p", options.top_p},
                       {"max_tokens", options.max_tokens},
                       {"seed", *request.seed}};
      if (completion.usage) {
        conv.metadata["usage"] = {{"prompt_tokens", completion.usage->prompt_tokens},
                                  {"completion_tokens", completion.usage->completion_tokens}};
      }
      if (!parsed.warnings.empty()) {
        for (const auto& w : parsed.warnings) log::warn("{}: {}", group.group_id, w);
        conv.metadata["parse_warnings"] = parsed.warnings;
      }
      appender.append(to_json(conv));
      produced[t] = std::move(conv);
    } catch (const DialogueError& e) {
      failed[t] = ItemFailure{group.group_id, "parse", e.what()};
    } catch (const ValidationError& e) {
      failed[t] = ItemFailure{group.group_id, "assemble", e.what()};
    }
  });
  report.retries = retries.load();

  for (std::size_t t = 0; t < todo.size(); ++t) {
    if (produced[t]) finished.emplace(groups[todo[t]].group_id, std::move(*produced[t]));
    if (failed[t]) report.failures.push_back(std::move(*failed[t]));
  }
  for (const auto& g : groups) {
    if (auto it = finished.find(g.group_id); it != finished.end()) report.conversations.push_back(it->second);
  }
  // Conversations from groups outside this run stay, after the run's own.
  for (const auto& c : done) {
    if (!group_ids.contains(c.group_id)) report.conversations.push_back(c);
  }
  write_conversations(report.conversations, out);

  std::vector<json> failure_lines;
  for (const auto& f : report.failures) failure_lines.push_back(to_json(f));
  write_jsonl(failures_path(out), failure_lines);
  log::info("generated {} conversations, {} failures, {} retries", report.requested - report.failures.size(),
            report.failures.size(), report.retries);
  return report;
}

}  // namespace multimage
