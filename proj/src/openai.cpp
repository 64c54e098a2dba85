#include "multimage/openai.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <random>
#include <thread>

#include <httplib.h>
#include <openssl/evp.h>

#include "multimage/error.hpp"
#include "multimage/log.hpp"

namespace multimage {

namespace {

bool retryable(int status) { return status == 408 || status == 429 || status >= 500; }

std::chrono::milliseconds backoff(const RetryPolicy& policy, int attempt) {
  thread_local std::mt19937_64 jitter{std::random_device{}()};
  const double raw = static_cast<double>(policy.base_delay.count()) *
                     std::pow(policy.multiplier, attempt);
  const double capped = std::min(raw, static_cast<double>(policy.max_delay.count()));
  const double scale = 0.5 + 0.5 * std::uniform_real_distribution<double>(0.0, 1.0)(jitter);
  return std::chrono::milliseconds(static_cast<long>(capped * scale));
}

std::string mime_for(const std::filesystem::path& path) {
  auto ext = path.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  if (ext == ".png") return "image/png";
  if (ext == ".jpg" || ext == ".jpeg") return "image/jpeg";
  if (ext == ".webp") return "image/webp";
  if (ext == ".gif") return "image/gif";
  if (ext == ".bmp") return "image/bmp";
  return "application/octet-stream";
}

std::vector<double> parse_embedding(const json& body) {
  try {
    const auto& data = body.at("data");
    if (!data.is_array() || data.empty()) throw RemoteError("embedding response has no data");
    return data.at(0).at("embedding").get<std::vector<double>>();
  } catch (const json::exception& e) {
    throw RemoteError(std::string("malformed embedding response: ") + e.what());
  }
}

}  // namespace

ApiClient::ApiClient(Endpoint endpoint, RetryPolicy policy)
    : endpoint_(std::move(endpoint)), policy_(policy) {
  if (endpoint_.base_url.empty()) throw ConfigError("endpoint base URL is empty");
  if (endpoint_.model.empty()) throw ConfigError("endpoint model name is empty");
  const char* key = std::getenv(endpoint_.api_key_env.c_str());
  if (key == nullptr || *key == '\0') {
    throw ConfigError("credential environment variable " + endpoint_.api_key_env + " is not set");
  }
  api_key_ = key;
  if (policy_.max_attempts < 1) throw ConfigError("retry policy needs at least one attempt");

  const auto& url = endpoint_.base_url;
  const auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) throw ConfigError("base URL lacks a scheme: " + url);
  const auto path_start = url.find('/', scheme_end + 3);
  origin_ = url.substr(0, path_start);
  path_prefix_ = path_start == std::string::npos ? "" : url.substr(path_start);
  while (!path_prefix_.empty() && path_prefix_.back() == '/') path_prefix_.pop_back();
}

PostResult ApiClient::post_json(std::string_view path, const json& body) const {
  const std::string target = path_prefix_ + std::string(path);
  const std::string payload = body.dump();
  httplib::Headers headers{{"Authorization", "Bearer " + api_key_}};

  int last_status = 0;
  std::string last_error;
  for (int attempt = 0; attempt < policy_.max_attempts; ++attempt) {
    if (attempt > 0) {
      const auto wait = backoff(policy_, attempt - 1);
      log::debug("retrying {} in {} ms (attempt {})", target, wait.count(), attempt + 1);
      std::this_thread::sleep_for(wait);
    }
    httplib::Client cli(origin_);
    cli.set_connection_timeout(endpoint_.connect_timeout);
    cli.set_read_timeout(endpoint_.read_timeout);
    auto res = cli.Post(target, headers, payload, "application/json");
    if (!res) {
      last_status = 0;
      last_error = httplib::to_string(res.error());
      log::warn("{}{}: transport error: {}", origin_, target, last_error);
      continue;
    }
    last_status = res->status;
    if (res->status >= 200 && res->status < 300) {
      try {
        return PostResult{json::parse(res->body), attempt + 1};
      } catch (const json::exception& e) {
        throw RemoteError(std::string("response is not JSON: ") + e.what(), res->status);
      }
    }
    last_error = res->body.substr(0, 200);
    if (res->status == 401 || res->status == 403) {
      throw AuthError("authentication rejected by " + origin_ + " (HTTP " +
                          std::to_string(res->status) + ")",
                      res->status);
    }
    if (!retryable(res->status)) {
      throw RemoteError("HTTP " + std::to_string(res->status) + " from " + target + ": " + last_error,
                        res->status);
    }
    log::warn("{}{}: HTTP {} (attempt {}/{})", origin_, target, res->status, attempt + 1,
              policy_.max_attempts);
  }
  throw RemoteError("gave up on " + target + " after " + std::to_string(policy_.max_attempts) +
                        " attempts (last: " + (last_status ? "HTTP " + std::to_string(last_status)
                                                           : last_error) +
                        ")",
                    last_status);
}

json to_json(const ChatRequest& request, const std::string& model) {
  json messages = json::array();
  for (const auto& m : request.messages) messages.push_back({{"role", m.role}, {"content", m.content}});
  json body = {{"model", model},
               {"messages", std::move(messages)},
               {"temperature", request.temperature},
               {"top_p", request.top_p},
               {"max_tokens", request.max_tokens}};
  if (request.seed) body["seed"] = *request.seed;
  return body;
}

ChatCompletion chat_complete(const ApiClient& client, const ChatRequest& request) {
  if (request.messages.empty()) throw ConfigError("chat request has no messages");
  auto result = client.post_json("/chat/completions", to_json(request, client.endpoint().model));
  ChatCompletion out;
  out.retries = result.attempts - 1;
  try {
    const auto& choices = result.body.at("choices");
    if (!choices.is_array() || choices.empty()) throw RemoteError("chat response has no choices");
    const auto& content = choices.at(0).at("message").at("content");
    out.text = content.is_string() ? content.get<std::string>() : std::string{};
    if (auto it = result.body.find("usage"); it != result.body.end() && it->is_object()) {
      out.usage = TokenUsage{it->value("prompt_tokens", 0L), it->value("completion_tokens", 0L)};
    }
  } catch (const json::exception& e) {
    throw RemoteError(std::string("malformed chat response: ") + e.what());
  }
  return out;
}

EmbeddingResponse embed_text(const ApiClient& client, const std::string& text) {
  auto result = client.post_json("/embeddings", {{"model", client.endpoint().model}, {"input", text}});
  return {parse_embedding(result.body), result.attempts - 1};
}

EmbeddingResponse embed_image(const ApiClient& client, const std::string& image_ref) {
  json body = {{"model", client.endpoint().model},
               {"input", json::array({image_content_part(image_ref)})}};
  auto result = client.post_json("/embeddings", body);
  return {parse_embedding(result.body), result.attempts - 1};
}

bool is_url(std::string_view ref) {
  return ref.starts_with("http://") || ref.starts_with("https://") || ref.starts_with("data:");
}

bool image_ref_exists(const std::string& ref) {
  if (is_url(ref)) return true;
  std::error_code ec;
  return std::filesystem::is_regular_file(ref, ec);
}

std::string image_data_url(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read image " + path);
  const std::string bytes{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  std::string encoded(4 * ((bytes.size() + 2) / 3), '\0');
  const int n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(encoded.data()),
                                reinterpret_cast<const unsigned char*>(bytes.data()),
                                static_cast<int>(bytes.size()));
  encoded.resize(static_cast<std::size_t>(n));
  return "data:" + mime_for(path) + ";base64," + encoded;
}

json image_content_part(const std::string& image_ref) {
  const std::string url = is_url(image_ref) ? image_ref : image_data_url(image_ref);
  return {{"type", "image_url"}, {"image_url", {{"url", url}}}};
}

}  // namespace multimage
