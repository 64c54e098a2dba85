#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "multimage/corpus.hpp"
#include "multimage/error.hpp"
#include "multimage/grouping.hpp"
#include "multimage/openai.hpp"

namespace multimage {

enum class TemplateName { kLlavaStyle, kLongForm };

std::string to_string(TemplateName name);
TemplateName template_from_string(const std::string& s);

struct PromptTemplate {
  TemplateName name;
  std::string_view body;
};

// The two shipped system prompts, verbatim.
const PromptTemplate& prompt_template(TemplateName name);

enum class Role { kUser, kAssistant };

std::string to_string(Role role);
Role role_from_string(const std::string& s);

struct Turn {
  Role role = Role::kUser;
  std::string content;

  bool operator==(const Turn&) const = default;
};

inline constexpr std::string_view kImagePlaceholder = "<image>";

// Quoting rule for the "User:" / "Assistant:" turn markers. A marker word
// standing at a boundary (start of text or after a non-alphanumeric
// character), followed by n >= 0 backslashes and a colon, gains one backslash
// when escaped and loses one when unescaped. Escaped text never contains a
// live marker, and unescape(escape(s)) == s for every s.
std::string escape_markers(std::string_view text);
std::string unescape_markers(std::string_view text);

// Same rule, additionally covering "Image <n>:" labels, for caption text.
std::string escape_caption(std::string_view text);
std::string unescape_caption(std::string_view text);

// Template body, a blank line, then "Image i: <caption>" lines (1-based).
// Throws ValidationError for fewer than 2 or more than 8 captions or a blank
// caption.
std::string render_prompt(const PromptTemplate& tmpl, const std::vector<std::string>& captions);

// Inverse of render_prompt. Throws ParseError if prompt was not rendered from tmpl.
std::vector<std::string> extract_captions(const PromptTemplate& tmpl, std::string_view prompt);

// "User: Q, Assistant: A" lines joined by "\n", contents marker-escaped.
// Turns must alternate starting with the user and end with the assistant.
std::string emit_dialogue(const std::vector<Turn>& turns);

enum class ParseMode { kLenient, kStrict };

class DialogueError : public Error {
 public:
  enum class Kind { kUnparseable, kTruncated };
  DialogueError(Kind kind, const std::string& what) : Error(what), kind_(kind) {}
  Kind kind() const { return kind_; }
  ExitCode exit_code() const override { return ExitCode::kValidation; }

 private:
  Kind kind_;
};

struct ParsedDialogue {
  std::vector<Turn> turns;
  std::vector<std::string> warnings;
};

// Splits a completion on live User:/Assistant: markers. Whitespace around
// markers and a single comma before "Assistant:" are separators; anything
// before the first "User:" is discarded. Contents are trimmed and unescaped.
// A malformed tail (a question without an answer, repeated or empty markers)
// raises DialogueError in strict mode; in lenient mode it is dropped with a
// warning, provided at least one complete pair precedes it.
ParsedDialogue parse_dialogue(std::string_view raw, ParseMode mode = ParseMode::kLenient);

struct TurnBounds {
  std::size_t min_turns = 2;
  std::size_t max_turns = 24;
};

struct Conversation {
  std::string id;
  std::string group_id;
  std::vector<std::string> images;
  std::vector<Turn> turns;
  TemplateName template_name = TemplateName::kLongForm;
  std::string model;
  json metadata = json::object();
};

// Human-readable problems with a conversation: role alternation, turn bounds,
// blank turns, and one placeholder per image at the head of the first user turn.
std::vector<std::string> conversation_problems(const Conversation& conv, const TurnBounds& bounds = {});

// Builds the dataset sample for a group: one "<image>\n" per member, in member
// order, is prepended to the first user turn. Throws ValidationError when the
// result would break a Conversation invariant.
Conversation assemble_sample(const ImageGroup& group, std::vector<std::string> image_refs, std::vector<Turn> turns,
                             TemplateName template_name, const std::string& model, const TurnBounds& bounds = {});

json to_json(const Conversation& conv);
// Schema check only; throws ParseError naming the field.
Conversation conversation_from_json(const json& record, std::size_t line);
std::vector<Conversation> read_conversations(const std::filesystem::path& path);
void write_conversations(const std::vector<Conversation>& convs, const std::filesystem::path& path);

struct GenerationOptions {
  TemplateName template_name = TemplateName::kLongForm;
  double temperature = 0.7;
  double top_p = 0.9;
  int max_tokens = 4096;
  std::size_t concurrency = 4;
  std::uint64_t seed = 0;
  ParseMode mode = ParseMode::kLenient;
  TurnBounds bounds;
};

struct GenerationReport {
  std::vector<Conversation> conversations;  // everything in the output file, group order
  std::vector<ItemFailure> failures;
  std::size_t resumed = 0;    // groups skipped because they were already done
  std::size_t requested = 0;  // groups sent to the endpoint in this run
  int retries = 0;
};

// Fixed user turn sent after the system prompt.
inline constexpr std::string_view kGenerationInstruction =
    "Write the conversation for the images described above, following the required format exactly.";

// One chat request per group whose "conv_<group_id>" is not already in `out`.
// Results are appended to `out` as they arrive, and on completion the file is
// rewritten with every conversation in group order. API and parse failures go
// to the report and to "<out>.failures.jsonl". Only configuration and
// authentication problems are fatal. Member ids missing from the corpus raise
// ValidationError before any request is made.
GenerationReport run_generation_batch(const std::vector<ImageGroup>& groups,
                                      const std::vector<ImageCaptionPair>& corpus, const ApiClient& client,
                                      const GenerationOptions& options, const std::filesystem::path& out);

std::filesystem::path failures_path(const std::filesystem::path& out);

}  // namespace multimage
