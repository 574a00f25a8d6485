#pragma once

#include <atomic>
#include <fstream>
#include <functional>
#include <map>
#include <mutex>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "trimediq/errors.hpp"
#include "trimediq/hash.hpp"

namespace trimediq {

struct ChatMessage {
  std::string role;  // "system", "user" or "assistant"
  std::string content;
  friend bool operator==(const ChatMessage&, const ChatMessage&) = default;
};

struct DecodingParams {
  double temperature = 0.0;
  int max_tokens = 512;
};

struct RetryPolicy {
  int max_retries = 1;
  int backoff_ms = 200;
};

/// Text-in, text-out backend with OpenAI chat-completion semantics.
class ChatBackend {
 public:
  virtual ~ChatBackend() = default;
  virtual std::string chat(const std::vector<ChatMessage>& messages, const DecodingParams& params) = 0;
  virtual std::string name() const = 0;
};

/// Key used by the scripted backend: FNV-1a over roles and contents.
inline std::string transcript_digest(const std::vector<ChatMessage>& messages) {
  Fnv1a h;
  for (const auto& m : messages) {
    h.update(m.role).update("\x1e").update(m.content).update("\x1f");
  }
  return h.hex();
}

/// Table-driven mock. Unregistered transcripts raise UnscriptedError.
class ScriptedChatBackend : public ChatBackend {
 public:
  ScriptedChatBackend() = default;
  ScriptedChatBackend(ScriptedChatBackend&& o) noexcept : table_(std::move(o.table_)), calls_(o.calls_.load()) {}
  void add(const std::vector<ChatMessage>& messages, std::string response) {
    table_[transcript_digest(messages)] = std::move(response);
  }
  void add_key(std::string digest, std::string response) { table_[std::move(digest)] = std::move(response); }

  /// Fixture format: a JSON object mapping transcript digest to response text.
  static ScriptedChatBackend from_json_text(const std::string& text) {
    ScriptedChatBackend b;
    nlohmann::json doc;
    try {
      doc = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
      throw ParseError(std::string("scripted fixture: ") + e.what());
    }
    if (!doc.is_object()) throw ParseError("scripted fixture must be a JSON object");
    for (auto it = doc.begin(); it != doc.end(); ++it) {
      if (!it.value().is_string()) throw ParseError("response must be a string", 0, it.key());
      b.table_[it.key()] = it.value().get<std::string>();
    }
    return b;
  }

  static ScriptedChatBackend load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open fixture " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return from_json_text(ss.str());
  }

  std::string to_json_text() const {
    nlohmann::json doc(table_);
    return doc.dump(2);
  }

  std::string chat(const std::vector<ChatMessage>& messages, const DecodingParams&) override {
    calls_.fetch_add(1);
    auto key = transcript_digest(messages);
    auto it = table_.find(key);
    if (it == table_.end()) throw UnscriptedError(key);
    return it->second;
  }

  std::string name() const override { return "scripted"; }
  std::size_t calls() const noexcept { return calls_.load(); }

 private:
  std::map<std::string, std::string> table_;
  std::atomic<std::size_t> calls_{0};
};

/// Mock backed by a callable; handy for randomized tests.
class FunctionChatBackend : public ChatBackend {
 public:
  using Fn = std::function<std::string(const std::vector<ChatMessage>&, const DecodingParams&)>;
  explicit FunctionChatBackend(Fn fn, std::string name = "function") : fn_(std::move(fn)), name_(std::move(name)) {}

  std::string chat(const std::vector<ChatMessage>& messages, const DecodingParams& params) override {
    std::lock_guard lock(mu_);
    ++calls_;
    return fn_(messages, params);
  }
  std::string name() const override { return name_; }
  std::size_t calls() const {
    std::lock_guard lock(mu_);
    return calls_;
  }

 private:
  Fn fn_;
  std::string name_;
  mutable std::mutex mu_;
  std::size_t calls_ = 0;
};

}  // namespace trimediq
