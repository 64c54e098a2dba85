#include "multimage/corpus.hpp"

#include <atomic>
#include <cmath>
#include <fstream>
#include <mutex>
#include <unordered_map>
#include <unordered_set>

#include "multimage/error.hpp"
#include "multimage/hash.hpp"
#include "multimage/log.hpp"
#include "multimage/parallel.hpp"

namespace multimage {

json to_json(const ItemFailure& failure) {
  return {{"id", failure.id}, {"stage", failure.stage}, {"reason", failure.reason}};
}

std::vector<ImageCaptionPair> parse_corpus(std::istream& in) {
  std::vector<ImageCaptionPair> pairs;
  std::unordered_set<std::string> seen;
  read_jsonl(in, [&](const json& r, std::size_t line) {
    ImageCaptionPair p{require_string(r, "id", line), require_string(r, "image", line),
                       require_string(r, "caption", line)};
    if (p.id.empty()) throw ParseError("empty id", line);
    if (p.caption.empty()) throw ParseError("empty caption for id \"" + p.id + "\"", line);
    if (!seen.insert(p.id).second) {
      throw ValidationError("duplicate id \"" + p.id + "\" at line " + std::to_string(line), {p.id});
    }
    pairs.push_back(std::move(p));
  });
  return pairs;
}

std::vector<ImageCaptionPair> read_corpus(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  return parse_corpus(in);
}

void write_corpus(const std::filesystem::path& path, const std::vector<ImageCaptionPair>& pairs) {
  std::vector<json> lines;
  lines.reserve(pairs.size());
  for (const auto& p : pairs) lines.push_back({{"id", p.id}, {"image", p.image_ref}, {"caption", p.caption}});
  write_jsonl(path, lines);
}

std::vector<ImageCaptionPair> import_sharegpt4v(const std::filesystem::path& path,
                                                const std::filesystem::path& image_root) {
  const json doc = read_json_file(path);
  if (!doc.is_array()) throw ParseError(path.string() + ": expected a JSON array");
  std::vector<ImageCaptionPair> pairs;
  std::unordered_set<std::string> seen;
  for (std::size_t i = 0; i < doc.size(); ++i) {
    const auto& e = doc[i];
    const std::size_t entry = i + 1;
    ImageCaptionPair p;
    p.id = e.at("id").is_string() ? e.at("id").get<std::string>() : e.at("id").dump();
    std::string image = require_string(e, "image", entry);
    p.image_ref = (!image_root.empty() && !is_url(image) && std::filesystem::path(image).is_relative())
                      ? (image_root / image).string()
                      : image;
    for (const auto& turn : require_field(e, "conversations", entry)) {
      if (turn.value("from", "") == "gpt") {
        p.caption = turn.value("value", "");
        break;
      }
    }
    if (p.caption.empty()) throw ParseError("entry has no gpt caption", entry);
    if (!seen.insert(p.id).second) throw ValidationError("duplicate id \"" + p.id + "\"", {p.id});
    pairs.push_back(std::move(p));
  }
  return pairs;
}

void validate_embedding(const EmbeddingRecord& rec) {
  if (rec.id.empty()) throw ValidationError("embedding record with empty id");
  if (rec.image_embedding.empty()) throw ValidationError("empty embedding for id \"" + rec.id + "\"", {rec.id});
  if (rec.image_embedding.size() != rec.caption_embedding.size()) {
    throw ValidationError("image/caption dimension mismatch for id \"" + rec.id + "\" (" +
                              std::to_string(rec.image_embedding.size()) + " vs " +
                              std::to_string(rec.caption_embedding.size()) + ")",
                          {rec.id});
  }
  for (const auto* v : {&rec.image_embedding, &rec.caption_embedding}) {
    for (double x : *v) {
      if (!std::isfinite(x)) throw ValidationError("non-finite component for id \"" + rec.id + "\"", {rec.id});
    }
  }
}

std::vector<double> read_finite_vector(const json& record, std::string_view field,
                                       std::size_t line, const std::string& id) {
  const auto& v = require_field(record, field, line);
  if (!v.is_array()) throw ParseError("field \"" + std::string(field) + "\" must be an array", line);
  std::vector<double> out;
  out.reserve(v.size());
  for (const auto& x : v) {
    if (x.is_null()) {
      throw ValidationError("non-finite component in \"" + std::string(field) + "\" for id \"" + id +
                                "\" (line " + std::to_string(line) + ")",
                            {id});
    }
    if (!x.is_number()) {
      throw ParseError("field \"" + std::string(field) + "\" has a non-numeric component", line);
    }
    const double d = x.get<double>();
    if (!std::isfinite(d)) {
      throw ValidationError("non-finite component in \"" + std::string(field) + "\" for id \"" + id + "\"",
                            {id});
    }
    out.push_back(d);
  }
  return out;
}

json to_json(const EmbeddingRecord& rec) {
  return {{"id", rec.id}, {"image_embedding", rec.image_embedding}, {"caption_embedding", rec.caption_embedding}};
}

EmbeddingRecord embedding_from_json(const json& r, std::size_t line) {
  EmbeddingRecord rec;
  rec.id = require_string(r, "id", line);
  rec.image_embedding = read_finite_vector(r, "image_embedding", line, rec.id);
  rec.caption_embedding = read_finite_vector(r, "caption_embedding", line, rec.id);
  validate_embedding(rec);
  return rec;
}

std::vector<EmbeddingRecord> read_embeddings(const std::filesystem::path& path) {
  std::vector<EmbeddingRecord> out;
  std::unordered_set<std::string> seen;
  read_jsonl(path, [&](const json& r, std::size_t line) {
    auto rec = embedding_from_json(r, line);
    if (!out.empty() && rec.image_embedding.size() != out.front().image_embedding.size()) {
      throw ValidationError("dimension of id \"" + rec.id + "\" differs from the rest of the file", {rec.id});
    }
    if (!seen.insert(rec.id).second) throw ValidationError("duplicate id \"" + rec.id + "\"", {rec.id});
    out.push_back(std::move(rec));
  });
  return out;
}

void write_embeddings(const std::vector<EmbeddingRecord>& records, const std::filesystem::path& path) {
  std::vector<json> lines;
  lines.reserve(records.size());
  for (const auto& r : records) {
    validate_embedding(r);
    lines.push_back(to_json(r));
  }
  write_jsonl(path, lines);
}

FetchResult fetch_embeddings(const std::vector<ImageCaptionPair>& pairs, const ApiClient& client,
                             const FetchOptions& options) {
  const auto& ep = client.endpoint();
  std::unordered_map<std::string, EmbeddingRecord> cached;
  std::unique_ptr<JsonlAppender> cache_sink;
  if (options.cache_dir) {
    std::filesystem::create_directories(*options.cache_dir);
    const auto cache_file =
        *options.cache_dir / (hex64(fnv1a64(ep.base_url + "\n" + ep.model)) + ".jsonl");
    if (std::filesystem::exists(cache_file)) {
      read_jsonl(cache_file, [&](const json& r, std::size_t line) {
        auto rec = embedding_from_json(r, line);
        cached.insert_or_assign(rec.id, std::move(rec));
      });
    }
    cache_sink = std::make_unique<JsonlAppender>(cache_file);
  }

  std::vector<std::optional<EmbeddingRecord>> slots(pairs.size());
  std::vector<ItemFailure> failures;
  std::mutex failures_mu;
  std::atomic<int> retries{0};
  std::atomic<std::size_t> hits{0};
  std::atomic<std::size_t> dimension{0};

  auto check_dimension = [&](const EmbeddingRecord& rec) {
    std::size_t expected = 0;
    const std::size_t d = rec.image_embedding.size();
    if (!dimension.compare_exchange_strong(expected, d) && expected != d) {
      throw ValidationError("embedding dimension mismatch: id \"" + rec.id + "\" has d=" +
                                std::to_string(d) + ", earlier records have d=" + std::to_string(expected),
                            {rec.id});
    }
  };

  parallel_for(pairs.size(), options.concurrency, [&](std::size_t i) {
    const auto& pair = pairs[i];
    if (auto it = cached.find(pair.id); it != cached.end()) {
      check_dimension(it->second);
      slots[i] = it->second;
      ++hits;
      return;
    }
    EmbeddingRecord rec{pair.id, {}, {}};
    try {
      if (!image_ref_exists(pair.image_ref)) {
        throw IoError("image reference does not resolve: " + pair.image_ref);
      }
      auto image = embed_image(client, pair.image_ref);
      auto caption = embed_text(client, pair.caption);
      retries += image.retries + caption.retries;
      rec.image_embedding = std::move(image.vector);
      rec.caption_embedding = std::move(caption.vector);
    } catch (const AuthError&) {
      throw;
    } catch (const Error& e) {
      if (options.strict) throw;
      std::lock_guard lock(failures_mu);
      failures.push_back({pair.id, "embed", e.what()});
      return;
    }
    if (rec.image_embedding.size() != rec.caption_embedding.size()) {
      throw ValidationError("embedding dimension mismatch between image (d=" +
                                std::to_string(rec.image_embedding.size()) + ") and caption (d=" +
                                std::to_string(rec.caption_embedding.size()) + ") for id \"" +
                                pair.id + "\"",
                            {pair.id});
    }
    validate_embedding(rec);
    check_dimension(rec);
    if (cache_sink) cache_sink->append(to_json(rec));
    slots[i] = std::move(rec);
  });

  FetchResult result;
  result.retries = retries.load();
  result.cache_hits = hits.load();
  for (auto& s : slots) {
    if (s) result.records.push_back(std::move(*s));
  }
  // Failure order follows input order regardless of completion order.
  std::unordered_map<std::string, std::size_t> position;
  for (std::size_t i = 0; i < pairs.size(); ++i) position.emplace(pairs[i].id, i);
  std::sort(failures.begin(), failures.end(),
            [&](const auto& a, const auto& b) { return position[a.id] < position[b.id]; });
  result.failures = std::move(failures);
  if (result.retries > 0) log::info("embedding requests retried {} time(s)", result.retries);
  return result;
}

}  // namespace multimage
