#pragma once

#include <chrono>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "multimage/jsonl.hpp"

namespace multimage {

// An OpenAI-compatible service: base_url includes the version prefix, e.g.
// "https://api.example.com/v1". The credential is read from api_key_env.
struct Endpoint {
  std::string base_url;
  std::string model;
  std::string api_key_env = "OPENAI_API_KEY";
  std::chrono::seconds connect_timeout{10};
  std::chrono::seconds read_timeout{300};
};

// Exponential backoff with jitter: attempt i (0-based) waits
// min(max_delay, base_delay * multiplier^i) scaled by a uniform factor in [0.5, 1).
struct RetryPolicy {
  int max_attempts = 6;
  std::chrono::milliseconds base_delay{500};
  std::chrono::milliseconds max_delay{30000};
  double multiplier = 2.0;
};

struct PostResult {
  json body;
  int attempts = 1;
};

// Thin request layer with the retry contract: 408/429/5xx and transport
// failures are retried, 401/403 throw AuthError at once, any other non-2xx
// throws RemoteError without retry. Safe to share across threads.
class ApiClient {
 public:
  // Throws ConfigError if the credential variable is unset or empty.
  ApiClient(Endpoint endpoint, RetryPolicy policy = {});

  PostResult post_json(std::string_view path, const json& body) const;

  const Endpoint& endpoint() const { return endpoint_; }
  const RetryPolicy& policy() const { return policy_; }

 private:
  Endpoint endpoint_;
  RetryPolicy policy_;
  std::string api_key_;
  std::string origin_;       // scheme://host[:port]
  std::string path_prefix_;  // "/v1" or ""
};

struct TokenUsage {
  long prompt_tokens = 0;
  long completion_tokens = 0;
};

struct ChatMessage {
  std::string role;
  json content;  // a string, or an array of content parts
};

struct ChatRequest {
  std::vector<ChatMessage> messages;
  double temperature = 0.7;
  double top_p = 0.9;
  int max_tokens = 4096;
  std::optional<std::uint64_t> seed;
};

struct ChatCompletion {
  std::string text;
  int retries = 0;
  std::optional<TokenUsage> usage;
};

json to_json(const ChatRequest& request, const std::string& model);

// POST {base}/chat/completions and return choices[0].message.content.
ChatCompletion chat_complete(const ApiClient& client, const ChatRequest& request);

struct EmbeddingResponse {
  std::vector<double> vector;
  int retries = 0;
};

// POST {base}/embeddings with a text input.
EmbeddingResponse embed_text(const ApiClient& client, const std::string& text);

// POST {base}/embeddings with the image as a single content part.
EmbeddingResponse embed_image(const ApiClient& client, const std::string& image_ref);

// "http(s)://..." references are passed through; anything else is treated as a
// local path and inlined as a base64 data URL.
bool is_url(std::string_view ref);
bool image_ref_exists(const std::string& ref);
std::string image_data_url(const std::string& path);
json image_content_part(const std::string& image_ref);

}  // namespace multimage
