#include <atomic>
#include <thread>

#include "test_support.hpp"

using namespace trimediq;
using namespace trimediq::testing;
using json = nlohmann::json;

namespace {

/// httplib server on an ephemeral loopback port, stopped on destruction.
class LoopbackServer {
 public:
  LoopbackServer() = default;
  httplib::Server& server() { return server_; }

  void start() {
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }
  std::string url(const std::string& base = "") const { return "http://127.0.0.1:" + std::to_string(port_) + base; }
  ~LoopbackServer() {
    server_.stop();
    if (thread_.joinable()) thread_.join();
  }

 private:
  httplib::Server server_;
  std::thread thread_;
  int port_ = 0;
};

void reply_json(httplib::Response& res, const json& j, int status = 200) {
  res.status = status;
  res.set_content(j.dump(), "application/json");
}

HttpOptions fast_options(int retries = 2) {
  HttpOptions o;
  o.retry = RetryPolicy{retries, 1};
  o.timeout_s = 5;
  return o;
}

/// Adapter stand-in that serves a toy expert, the way the model-adapter serves a real LLM.
struct FakeAdapter {
  explicit FakeAdapter(const ToyExpert& e, std::size_t advertised_d = 0) : expert(e) {
    auto& s = srv.server();
    s.Get("/info", [this, advertised_d](const httplib::Request&, httplib::Response& res) {
      reply_json(res, {{"model", "toy"},
                       {"d", advertised_d ? advertised_d : expert.model_dim()},
                       {"embed_dim", 6},
                       {"options", {"A", "B", "C", "D", "E", "F"}}});
    });
    s.Post("/chat", [](const httplib::Request& req, httplib::Response& res) {
      auto body = json::parse(req.body);
      reply_json(res, {{"text", "echo: " + body["messages"].back()["content"].get<std::string>()}});
    });
    s.Post("/embed", [this](const httplib::Request& req, httplib::Response& res) {
      auto body = json::parse(req.body);
      json vectors = json::array();
      for (const auto& t : body["texts"]) {
        auto v = embedder.embed_one(t.get<std::string>());
        vectors.push_back(std::vector<double>(v.data(), v.data() + v.size()));
      }
      reply_json(res, {{"vectors", vectors}});
    });
    s.Post("/score_with_prefix", [this](const httplib::Request& req, httplib::Response& res) {
      auto body = json::parse(req.body);
      const auto k = body["k"].get<Eigen::Index>(), d = body["d"].get<Eigen::Index>();
      auto flat = body["prefix"].get<std::vector<double>>();
      if (static_cast<Eigen::Index>(flat.size()) != k * d || d != static_cast<Eigen::Index>(expert.model_dim())) {
        reply_json(res, {{"error", "prefix shape mismatch"}}, 400);
        return;
      }
      using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
      Matrix prefix = Eigen::Map<RowMajor>(flat.data(), k, d);
      const auto n = body["options"].size();
      Vector logits = expert.score(prefix, expert.vocab().encode(body["prompt"].get<std::string>()), n);
      reply_json(res, {{"logits", std::vector<double>(logits.data(), logits.data() + logits.size())}});
    });
    srv.start();
  }

  const ToyExpert& expert;
  HashEmbeddingProvider embedder{6};
  LoopbackServer srv;
};

}  // namespace

TEST(Endpoint, ParsesHttpUrls) {
  auto e = HttpEndpoint::parse("http://localhost:8000/v1/");
  EXPECT_EQ(e.host, "localhost");
  EXPECT_EQ(e.port, 8000);
  EXPECT_EQ(e.base_path, "/v1");
  EXPECT_EQ(HttpEndpoint::parse("http://example.org").port, 80);
  EXPECT_THROW(HttpEndpoint::parse("https://example.org"), ConfigError);
  EXPECT_THROW(HttpEndpoint::parse("localhost:8000"), ConfigError);
}

TEST(OpenAIChat, SendsMessagesAndReadsContent) {
  LoopbackServer srv;
  json seen;
  std::string auth;
  srv.server().Post("/v1/chat/completions", [&](const httplib::Request& req, httplib::Response& res) {
    seen = json::parse(req.body);
    auth = req.get_header_value("Authorization");
    reply_json(res, {{"choices", {{{"message", {{"role", "assistant"}, {"content", "Answer: B"}}}}}}});
  });
  srv.start();
  auto opts = fast_options();
  opts.api_key = "secret";
  OpenAIChatBackend chat(srv.url("/v1"), "some-model", opts);
  EXPECT_EQ(chat.chat({{"system", "s"}, {"user", "u"}}, DecodingParams{0.0, 64}), "Answer: B");
  EXPECT_EQ(seen["model"], "some-model");
  EXPECT_EQ(seen["messages"][1]["content"], "u");
  EXPECT_EQ(seen["temperature"], 0.0);
  EXPECT_EQ(seen["max_tokens"], 64);
  EXPECT_EQ(auth, "Bearer secret");
}

TEST(OpenAIChat, RetriesServerErrorsThenSucceeds) {
  LoopbackServer srv;
  std::atomic<int> hits{0};
  srv.server().Post("/chat/completions", [&](const httplib::Request&, httplib::Response& res) {
    if (++hits < 3) return reply_json(res, {{"error", "busy"}}, hits == 1 ? 503 : 429);
    reply_json(res, {{"choices", {{{"message", {{"content", "ok"}}}}}}});
  });
  srv.start();
  OpenAIChatBackend chat(srv.url(), "m", fast_options(2));
  EXPECT_EQ(chat.chat({{"user", "hi"}}, {}), "ok");
  EXPECT_EQ(hits.load(), 3);
}

TEST(OpenAIChat, ClientErrorFailsImmediatelyWithDetail) {
  LoopbackServer srv;
  std::atomic<int> hits{0};
  srv.server().Post("/chat/completions", [&](const httplib::Request&, httplib::Response& res) {
    ++hits;
    reply_json(res, {{"error", "bad model name"}}, 400);
  });
  srv.start();
  OpenAIChatBackend chat(srv.url(), "m", fast_options(3));
  try {
    chat.chat({{"user", "hi"}}, {});
    FAIL();
  } catch (const TransportError& e) {
    EXPECT_EQ(e.status(), 400);
    EXPECT_EQ(e.attempts(), 1);
    EXPECT_NE(std::string(e.what()).find("bad model name"), std::string::npos);
  }
  EXPECT_EQ(hits.load(), 1);
}

TEST(OpenAIChat, ExhaustedRetriesReportAttempts) {
  LoopbackServer srv;
  srv.server().Post("/chat/completions",
                    [&](const httplib::Request&, httplib::Response& res) { reply_json(res, {{"error", "down"}}, 500); });
  srv.start();
  OpenAIChatBackend chat(srv.url(), "m", fast_options(2));
  try {
    chat.chat({{"user", "hi"}}, {});
    FAIL();
  } catch (const TransportError& e) {
    EXPECT_EQ(e.attempts(), 3);
    EXPECT_EQ(e.status(), 500);
  }
}

TEST(OpenAIChat, UnreachableServerIsTransportError) {
  int port;
  {
    httplib::Server probe;
    port = probe.bind_to_any_port("127.0.0.1");
  }
  auto opts = fast_options(0);
  opts.timeout_s = 1;
  OpenAIChatBackend chat("http://127.0.0.1:" + std::to_string(port), "m", opts);
  EXPECT_THROW(chat.chat({{"user", "hi"}}, {}), TransportError);
}

TEST(OpenAIChat, MalformedBodyIsTransportError) {
  LoopbackServer srv;
  srv.server().Post("/chat/completions",
                    [&](const httplib::Request&, httplib::Response& res) { reply_json(res, {{"choices", json::array()}}); });
  srv.start();
  OpenAIChatBackend chat(srv.url(), "m", fast_options(0));
  EXPECT_THROW(chat.chat({{"user", "hi"}}, {}), TransportError);
}

TEST(Adapter, InfoChatAndEmbed) {
  const auto expert = tiny_expert();
  FakeAdapter fake(expert);
  AdapterClient client(fake.srv.url(), fast_options());
  auto info = client.info();
  EXPECT_EQ(info.model, "toy");
  EXPECT_EQ(info.hidden_size, 8u);
  EXPECT_EQ(info.embed_dim, 6u);
  EXPECT_EQ(info.options.size(), 6u);

  AdapterChatBackend chat(client);
  for (int i = 0; i < 10; ++i) EXPECT_EQ(chat.chat({{"user", "same"}}, {}), "echo: same");

  RemoteEmbeddingProvider remote(client);
  EXPECT_EQ(remote.dim(), 6u);
  auto v = remote.embed({"night sweats", "fatigue"});
  ASSERT_EQ(v.size(), 2u);
  EXPECT_LE((v[0] - fake.embedder.embed_one("night sweats")).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_TRUE(remote.embed({}).empty());
  RemoteEmbeddingProvider wrong(client, 7);
  EXPECT_THROW(wrong.embed({"x"}), ShapeError);
}

TEST(Adapter, ScoreWithPrefixMatchesInProcessExpert) {
  const auto expert = tiny_expert();
  FakeAdapter fake(expert);
  AdapterClient client(fake.srv.url(), fast_options());
  RemotePrefixScorer remote(client, 8);
  ToyExpertScorer local(expert);
  auto ex = tiny_example();
  Matrix prefix(3, 8);
  for (Eigen::Index i = 0; i < prefix.size(); ++i) prefix.data()[i] = std::cos(0.1 * static_cast<double>(i));
  EXPECT_LE((remote.option_logits(prefix, ex.prompt, ex.mcq) - local.option_logits(prefix, ex.prompt, ex.mcq))
                .cwiseAbs()
                .maxCoeff(),
            1e-12);
  // k = 0 equals plain scoring
  Vector plain = expert.score_plain(expert.vocab().encode(ex.prompt), 4);
  EXPECT_LE((remote.option_logits(Matrix(0, 8), ex.prompt, ex.mcq) - plain).cwiseAbs().maxCoeff(), 1e-4);
  EXPECT_THROW(remote.option_logits(Matrix::Zero(2, 6), ex.prompt, ex.mcq), ShapeError);
  Matrix bad = prefix;
  bad(0, 0) = std::numeric_limits<double>::infinity();
  EXPECT_THROW(remote.option_logits(bad, ex.prompt, ex.mcq), ShapeError);
}

TEST(Adapter, HiddenSizeMismatchRefusesToStart) {
  const auto expert = tiny_expert();
  FakeAdapter fake(expert, 4096);
  AdapterClient client(fake.srv.url(), fast_options());
  try {
    RemotePrefixScorer remote(client, 8);
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("d=4096"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("d=8"), std::string::npos);
  }
}

TEST(Adapter, PgtRunsThroughTheAdapter) {
  const auto expert = tiny_expert();
  FakeAdapter fake(expert);
  AdapterClient client(fake.srv.url(), fast_options());
  RemotePrefixScorer remote(client, 8);
  RemoteEmbeddingProvider embed(client);
  HashEmbeddingProvider local_embed(6);
  ToyExpertScorer local(expert);
  auto model = ProjectionModel::init(Mode::PGT, tiny_train_config(), 8);
  auto rec = fixture_case();
  auto kg = tiny_example().kg;
  ExpertView view{&rec, &kg, nullptr, 1};
  auto a = predict_answer(view, Mode::PGT, {nullptr, &remote, &embed, &model});
  auto b = predict_answer(view, Mode::PGT, {nullptr, &local, &local_embed, &model});
  EXPECT_LE((a.confidence - b.confidence).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Adapter, ServerRejectionSurfacesAsTransportError) {
  const auto expert = tiny_expert();
  FakeAdapter fake(expert);
  AdapterClient client(fake.srv.url(), fast_options());
  EXPECT_THROW(client.score_with_prefix(Matrix::Zero(1, 5), "x", {"A", "B"}), TransportError);
}
