#pragma once

#include <chrono>
#include <memory>
#include <regex>
#include <semaphore>
#include <string>
#include <thread>
#include <vector>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "trimediq/chat.hpp"
#include "trimediq/embedding.hpp"
#include "trimediq/errors.hpp"
#include "trimediq/scoring.hpp"

namespace trimediq {

/// Plain-http endpoint: host, port and a base path prepended to every request path.
struct HttpEndpoint {
  std::string host;
  int port = 80;
  std::string base_path;

  static HttpEndpoint parse(const std::string& url) {
    static const std::regex re(R"(^http://([^/:]+)(?::(\d+))?(/.*)?$)");
    std::smatch m;
    if (!std::regex_match(url, m, re)) throw ConfigError("unsupported endpoint URL '" + url + "' (expected http://host[:port][/path])");
    HttpEndpoint e;
    e.host = m[1].str();
    if (m[2].matched) e.port = std::stoi(m[2].str());
    e.base_path = m[3].matched ? m[3].str() : "";
    while (!e.base_path.empty() && e.base_path.back() == '/') e.base_path.pop_back();
    return e;
  }
  std::string url() const { return "http://" + host + ":" + std::to_string(port) + base_path; }
};

struct HttpOptions {
  RetryPolicy retry;
  int timeout_s = 60;
  std::string api_key;
  std::size_t max_in_flight = 4;
};

/// JSON request with retries on connection failures, 429 and 5xx. Other statuses fail at once.
class JsonHttpClient {
 public:
  JsonHttpClient(HttpEndpoint endpoint, HttpOptions options)
      : endpoint_(std::move(endpoint)),
        options_(std::move(options)),
        slots_(static_cast<std::ptrdiff_t>(std::clamp<std::size_t>(options_.max_in_flight, 1, kMaxSlots))) {}

  nlohmann::json post(const std::string& path, const nlohmann::json& body) { return request("POST", path, &body); }
  nlohmann::json get(const std::string& path) { return request("GET", path, nullptr); }

  const HttpEndpoint& endpoint() const noexcept { return endpoint_; }

 private:
  static constexpr std::size_t kMaxSlots = 256;

  nlohmann::json request(const char* method, const std::string& path, const nlohmann::json* body) {
    const std::string full = endpoint_.base_path + path;
    const int attempts = 1 + std::max(0, options_.retry.max_retries);
    std::string last_error;
    int last_status = 0;
    for (int attempt = 1; attempt <= attempts; ++attempt) {
      if (attempt > 1) std::this_thread::sleep_for(std::chrono::milliseconds(options_.retry.backoff_ms * (attempt - 1)));
      httplib::Client cli(endpoint_.host, endpoint_.port);
      cli.set_connection_timeout(options_.timeout_s, 0);
      cli.set_read_timeout(options_.timeout_s, 0);
      cli.set_write_timeout(options_.timeout_s, 0);
      httplib::Headers headers;
      if (!options_.api_key.empty()) headers.emplace("Authorization", "Bearer " + options_.api_key);
      httplib::Result res;
      {
        slots_.acquire();
        struct Release {
          std::counting_semaphore<kMaxSlots>& s;
          ~Release() { s.release(); }
        } release{slots_};
        res = body ? cli.Post(full, headers, body->dump(), "application/json") : cli.Get(full, headers);
      }
      if (!res) {
        last_error = method + std::string(" ") + endpoint_.url() + path + ": " + httplib::to_string(res.error());
        last_status = 0;
        continue;
      }
      last_status = res->status;
      if (res->status == 200) {
        try {
          return nlohmann::json::parse(res->body);
        } catch (const nlohmann::json::parse_error& e) {
          throw TransportError(endpoint_.url() + path + " returned invalid JSON: " + e.what(), attempt, res->status);
        }
      }
      last_error = method + std::string(" ") + endpoint_.url() + path + " returned HTTP " + std::to_string(res->status) +
                   error_detail(res->body);
      if (res->status != 429 && res->status < 500) throw TransportError(last_error, attempt, res->status);
    }
    throw TransportError(last_error, attempts, last_status);
  }

  static std::string error_detail(const std::string& body) {
    try {
      auto j = nlohmann::json::parse(body);
      if (j.contains("error")) return ": " + (j["error"].is_string() ? j["error"].get<std::string>() : j["error"].dump());
    } catch (const nlohmann::json::exception&) {
    }
    return "";
  }

  HttpEndpoint endpoint_;
  HttpOptions options_;
  std::counting_semaphore<kMaxSlots> slots_;
};

inline nlohmann::json messages_to_json(const std::vector<ChatMessage>& messages) {
  auto arr = nlohmann::json::array();
  for (const auto& m : messages) arr.push_back({{"role", m.role}, {"content", m.content}});
  return arr;
}

/// OpenAI-compatible chat completions. The URL is the API base, e.g. http://localhost:8000/v1.
class OpenAIChatBackend : public ChatBackend {
 public:
  OpenAIChatBackend(const std::string& url, std::string model, HttpOptions options = {})
      : client_(HttpEndpoint::parse(url), std::move(options)), model_(std::move(model)) {}

  std::string chat(const std::vector<ChatMessage>& messages, const DecodingParams& params) override {
    nlohmann::json body{{"model", model_},
                        {"messages", messages_to_json(messages)},
                        {"temperature", params.temperature},
                        {"max_tokens", params.max_tokens}};
    auto j = client_.post("/chat/completions", body);
    try {
      return j.at("choices").at(0).at("message").at("content").get<std::string>();
    } catch (const nlohmann::json::exception&) {
      throw TransportError("chat completion response lacks choices[0].message.content");
    }
  }
  std::string name() const override { return "openai:" + model_; }

 private:
  JsonHttpClient client_;
  std::string model_;
};

// ---------------------------------------------------------------------------
// Model adapter service

struct AdapterInfo {
  std::string model;
  std::size_t hidden_size = 0;  // d
  std::size_t embed_dim = 0;
  std::vector<std::string> options;
};

class AdapterClient {
 public:
  explicit AdapterClient(const std::string& url, HttpOptions options = {})
      : client_(HttpEndpoint::parse(url), std::move(options)) {}

  AdapterInfo info() {
    auto j = client_.get("/info");
    AdapterInfo i;
    try {
      i.model = j.at("model").get<std::string>();
      i.hidden_size = j.at("d").get<std::size_t>();
      i.embed_dim = j.at("embed_dim").get<std::size_t>();
      i.options = j.at("options").get<std::vector<std::string>>();
    } catch (const nlohmann::json::exception& e) {
      throw TransportError(std::string("malformed /info response: ") + e.what());
    }
    return i;
  }

  std::string chat(const std::vector<ChatMessage>& messages, const DecodingParams& params) {
    auto j = client_.post("/chat", {{"messages", messages_to_json(messages)},
                                    {"temperature", params.temperature},
                                    {"max_tokens", params.max_tokens}});
    if (!j.contains("text") || !j["text"].is_string()) throw TransportError("malformed /chat response: missing text");
    return j["text"].get<std::string>();
  }

  std::vector<Vector> embed(const std::vector<std::string>& texts) {
    auto j = client_.post("/embed", {{"texts", texts}});
    std::vector<Vector> out;
    try {
      for (const auto& v : j.at("vectors")) {
        auto xs = v.get<std::vector<double>>();
        out.push_back(Eigen::Map<const Vector>(xs.data(), static_cast<Eigen::Index>(xs.size())));
      }
    } catch (const nlohmann::json::exception& e) {
      throw TransportError(std::string("malformed /embed response: ") + e.what());
    }
    if (out.size() != texts.size()) throw TransportError("/embed returned " + std::to_string(out.size()) + " vectors for " +
                                                         std::to_string(texts.size()) + " texts");
    return out;
  }

  /// Prefix travels row-major with its shape; letters name the options to score.
  Vector score_with_prefix(const Matrix& prefix, const std::string& prompt, const std::vector<std::string>& letters) {
    std::vector<double> flat(static_cast<std::size_t>(prefix.size()));
    using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    Eigen::Map<RowMajor>(flat.data(), prefix.rows(), prefix.cols()) = prefix;
    auto j = client_.post("/score_with_prefix", {{"prefix", flat},
                                                 {"k", prefix.rows()},
                                                 {"d", prefix.cols()},
                                                 {"prompt", prompt},
                                                 {"options", letters}});
    std::vector<double> logits;
    try {
      logits = j.at("logits").get<std::vector<double>>();
    } catch (const nlohmann::json::exception& e) {
      throw TransportError(std::string("malformed /score_with_prefix response: ") + e.what());
    }
    if (logits.size() != letters.size())
      throw TransportError("/score_with_prefix returned " + std::to_string(logits.size()) + " logits for " +
                           std::to_string(letters.size()) + " options");
    return Eigen::Map<const Vector>(logits.data(), static_cast<Eigen::Index>(logits.size()));
  }

 private:
  JsonHttpClient client_;
};

/// Chat through the adapter's /chat route.
class AdapterChatBackend : public ChatBackend {
 public:
  explicit AdapterChatBackend(AdapterClient& client) : client_(client) {}
  std::string chat(const std::vector<ChatMessage>& messages, const DecodingParams& params) override {
    return client_.chat(messages, params);
  }
  std::string name() const override { return "adapter"; }

 private:
  AdapterClient& client_;
};

class RemoteEmbeddingProvider : public EmbeddingProvider {
 public:
  RemoteEmbeddingProvider(AdapterClient& client, std::size_t dim) : client_(client), dim_(dim) {}
  /// Width taken from /info.
  explicit RemoteEmbeddingProvider(AdapterClient& client) : client_(client), dim_(client.info().embed_dim) {}

  std::size_t dim() const override { return dim_; }
  std::string name() const override { return "adapter-embed-" + std::to_string(dim_); }
  std::vector<Vector> embed(const std::vector<std::string>& texts) override {
    if (texts.empty()) return {};
    auto out = client_.embed(texts);
    for (const auto& v : out)
      if (static_cast<std::size_t>(v.size()) != dim_)
        throw ShapeError("adapter embedding width " + std::to_string(v.size()) + " != advertised " + std::to_string(dim_));
    return out;
  }

 private:
  AdapterClient& client_;
  std::size_t dim_;
};

/// Evaluation-only injectable expert behind the adapter. Refuses to start when the
/// advertised hidden size differs from the one the projection was trained for.
class RemotePrefixScorer : public PrefixScorer {
 public:
  RemotePrefixScorer(AdapterClient& client, std::size_t expected_d) : client_(client) {
    auto info = client_.info();
    if (info.hidden_size != expected_d)
      throw ConfigError("adapter serves hidden size d=" + std::to_string(info.hidden_size) + " (model " + info.model +
                        ") but the projection expects d=" + std::to_string(expected_d));
    d_ = info.hidden_size;
  }

  std::size_t hidden_size() const override { return d_; }

  Vector option_logits(const Matrix& prefix, const std::string& prompt, const MCQ& mcq) override {
    if (static_cast<std::size_t>(prefix.cols()) != d_)
      throw ShapeError("prefix width " + std::to_string(prefix.cols()) + " != adapter hidden size " + std::to_string(d_));
    if (!prefix.allFinite()) throw ShapeError("prefix contains non-finite values");
    std::vector<std::string> letters;
    for (std::size_t i = 0; i < mcq.size(); ++i) letters.emplace_back(1, MCQ::letter_at(i));
    return client_.score_with_prefix(prefix, prompt, letters);
  }

 private:
  AdapterClient& client_;
  std::size_t d_ = 0;
};

}  // namespace trimediq
