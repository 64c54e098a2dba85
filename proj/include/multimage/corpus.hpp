#pragma once

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "multimage/jsonl.hpp"
#include "multimage/openai.hpp"

namespace multimage {

struct ImageCaptionPair {
  std::string id;
  std::string image_ref;
  std::string caption;

  bool operator==(const ImageCaptionPair&) const = default;
};

// Image and caption vectors share one dimension d >= 1; all components finite.
struct EmbeddingRecord {
  std::string id;
  std::vector<double> image_embedding;
  std::vector<double> caption_embedding;

  bool operator==(const EmbeddingRecord&) const = default;
};

// A per-item failure that did not abort its stage.
struct ItemFailure {
  std::string id;
  std::string stage;
  std::string reason;
};

json to_json(const ItemFailure& failure);

// Corpus lines: {"id": "...", "image": "...", "caption": "..."}.
// Pairs come back in file order. Throws ParseError (with line number) on a
// malformed line and ValidationError naming the id on duplicates.
std::vector<ImageCaptionPair> parse_corpus(std::istream& in);
std::vector<ImageCaptionPair> read_corpus(const std::filesystem::path& path);
void write_corpus(const std::filesystem::path& path, const std::vector<ImageCaptionPair>& pairs);

// Converts a ShareGPT4V-style JSON array (entries with "id", "image" and a
// "conversations" list whose first "gpt" turn is the caption) into pairs.
// Relative image paths are resolved against image_root when it is non-empty.
std::vector<ImageCaptionPair> import_sharegpt4v(const std::filesystem::path& path,
                                                const std::filesystem::path& image_root = {});

// Throws ValidationError naming rec.id when dimensions differ, are zero, or a
// component is not finite.
void validate_embedding(const EmbeddingRecord& rec);

// Embedding lines: {"id", "image_embedding": [...], "caption_embedding": [...]}.
std::vector<EmbeddingRecord> read_embeddings(const std::filesystem::path& path);
void write_embeddings(const std::vector<EmbeddingRecord>& records, const std::filesystem::path& path);
json to_json(const EmbeddingRecord& rec);
EmbeddingRecord embedding_from_json(const json& record, std::size_t line);

// Reads a numeric array whose nulls stand for NaN/Infinity; non-finite values
// raise ValidationError naming id.
std::vector<double> read_finite_vector(const json& record, std::string_view field,
                                       std::size_t line, const std::string& id);

struct FetchOptions {
  std::size_t concurrency = 4;
  bool strict = false;
  // Records are cached under cache_dir keyed by (base URL, model, id).
  std::optional<std::filesystem::path> cache_dir;
};

struct FetchResult {
  std::vector<EmbeddingRecord> records;  // input order, failed items omitted
  std::vector<ItemFailure> failures;
  int retries = 0;
  std::size_t cache_hits = 0;
};

// Embeds every pair's image and caption through an OpenAI-compatible
// embeddings service with at most options.concurrency requests in flight.
// Non-retryable per-item errors are collected (or rethrown when strict);
// inconsistent dimensions anywhere are fatal (ValidationError).
FetchResult fetch_embeddings(const std::vector<ImageCaptionPair>& pairs, const ApiClient& client,
                             const FetchOptions& options = {});

}  // namespace multimage
