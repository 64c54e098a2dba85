#pragma once

// Scripted OpenAI-compatible HTTP server for tests. Every POST is recorded and
// answered by the handler registered for its path.

#include <cstdlib>
#include <functional>
#include <map>
#include <mutex>
#include <stdexcept>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include <httplib.h>

#include "multimage/jsonl.hpp"

namespace multimage::testing {

struct MockReply {
  int status = 200;
  json body = json::object();
};

class MockServer {
 public:
  using Handler = std::function<MockReply(const json& request)>;

  MockServer() {
    server_.Post(R"(/.*)", [this](const httplib::Request& req, httplib::Response& res) {
      Handler handler;
      json body;
      try {
        body = json::parse(req.body);
      } catch (const json::exception&) {
        body = req.body;
      }
      {
        std::lock_guard lock(mu_);
        requests_[req.path].push_back(body);
        auto it = handlers_.find(req.path);
        if (it != handlers_.end()) handler = it->second;
      }
      MockReply reply = handler ? handler(body) : MockReply{404, {{"error", "no handler"}}};
      res.status = reply.status;
      res.set_content(reply.body.dump(), "application/json");
    });
    port_ = server_.bind_to_any_port("127.0.0.1");
    if (port_ <= 0) throw std::runtime_error("mock server could not bind");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }

  ~MockServer() {
    server_.stop();
    if (thread_.joinable()) thread_.join();
  }

  MockServer(const MockServer&) = delete;
  MockServer& operator=(const MockServer&) = delete;

  void on(const std::string& path, Handler handler) {
    std::lock_guard lock(mu_);
    handlers_[path] = std::move(handler);
  }

  std::string base_url() const { return "http://127.0.0.1:" + std::to_string(port_) + "/v1"; }

  std::size_t calls(const std::string& path) const {
    std::lock_guard lock(mu_);
    auto it = requests_.find(path);
    return it == requests_.end() ? 0 : it->second.size();
  }

  std::vector<json> requests(const std::string& path) const {
    std::lock_guard lock(mu_);
    auto it = requests_.find(path);
    return it == requests_.end() ? std::vector<json>{} : it->second;
  }

 private:
  httplib::Server server_;
  std::thread thread_;
  int port_ = 0;
  mutable std::mutex mu_;
  std::map<std::string, Handler> handlers_;
  std::map<std::string, std::vector<json>> requests_;
};

inline MockReply chat_reply(const std::string& text) {
  return {200,
          {{"id", "chatcmpl-mock"},
           {"object", "chat.completion"},
           {"choices", json::array({{{"index", 0},
                                     {"message", {{"role", "assistant"}, {"content", text}}},
                                     {"finish_reason", "stop"}}})},
           {"usage", {{"prompt_tokens", 10}, {"completion_tokens", 20}, {"total_tokens", 30}}}}};
}

inline MockReply embedding_reply(const std::vector<double>& v) {
  return {200, {{"object", "list"}, {"data", json::array({{{"index", 0}, {"embedding", v}}})}}};
}

// Credential variable used by all tests; the value is irrelevant to the mock.
inline constexpr const char* kTestKeyEnv = "MULTIMAGE_TEST_API_KEY";

inline void set_test_key() { ::setenv(kTestKeyEnv, "test-key", 1); }

}  // namespace multimage::testing
