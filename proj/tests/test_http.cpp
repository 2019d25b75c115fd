#include <doctest.h>

#include <cmath>
#include <thread>

#include <httplib.h>

#include "pu/gateway.hpp"
#include "pu/http_backends.hpp"

using namespace pu;
using nlohmann::json;

namespace {

// Local server standing in for an OpenAI-compatible endpoint.
class FakeServer {
 public:
  FakeServer() {
    server_.Post("/v1/chat/completions", [this](const httplib::Request& req, httplib::Response& res) {
      last_chat = json::parse(req.body);
      ++chat_calls;
      if (fail_next > 0) {
        --fail_next;
        res.status = 503;
        return;
      }
      if (last_chat.value("max_tokens", 0) == 1) {
        res.set_content(json{{"choices",
                              {{{"logprobs",
                                 {{"content",
                                   {{{"token", "A"},
                                     {"logprob", std::log(0.25)},
                                     {"top_logprobs",
                                      {{{"token", " A"}, {"logprob", std::log(0.7)}},
                                       {{"token", "B"}, {"logprob", std::log(0.2)}}}}}}}}}}}}}
                            .dump(),
                        "application/json");
        return;
      }
      const std::string content = last_chat.value("max_tokens", 0) == 5 ? "correct" : "Linda Davis";
      res.set_content(json{{"choices",
                            {{{"message", {{"role", "assistant"}, {"content", content}}},
                              {"logprobs",
                               {{"content", {{{"token", "Linda"}, {"logprob", -0.2}}, {{"token", " Davis"}, {"logprob", -0.05}}}}}}}}}}
                          .dump(),
                      "application/json");
    });
    server_.Post("/v1/completions", [this](const httplib::Request& req, httplib::Response& res) {
      const auto body = json::parse(req.body);
      const std::string prompt = body.at("prompt");
      // Prompt "Q:" followed by forced " abc def": tokens at offsets 0, 2, 6.
      CHECK(prompt == "Q: abc def");
      res.set_content(json{{"choices",
                            {{{"text", prompt},
                              {"logprobs",
                               {{"tokens", {"Q:", " abc", " def"}},
                                {"token_logprobs", {nullptr, -1.5, -0.5}},
                                {"text_offset", {0, 2, 6}}}}}}}}
                          .dump(),
                      "application/json");
    });
    server_.Post("/v1/entailment", [](const httplib::Request& req, httplib::Response& res) {
      const auto body = json::parse(req.body);
      json probs = json::array();
      for (const auto& p : body.at("pairs")) {
        probs.push_back(p.at("premise").get<std::string>().find(p.at("hypothesis").get<std::string>()) !=
                                std::string::npos
                            ? 0.9
                            : 0.1);
      }
      res.set_content(json{{"entailment", probs}}.dump(), "application/json");
    });
    server_.Post("/v1/embeddings", [this](const httplib::Request& req, httplib::Response& res) {
      last_embed = json::parse(req.body);
      res.set_content(json{{"data", {{{"embedding", {0.1, 0.2, 0.3}}}}}}.dump(), "application/json");
    });
    server_.Post("/v1/broken", [](const httplib::Request&, httplib::Response& res) {
      res.set_content("not json", "text/plain");
    });
    server_.Post("/v1/teapot", [](const httplib::Request&, httplib::Response& res) { res.status = 418; });
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }
  ~FakeServer() {
    server_.stop();
    thread_.join();
  }

  [[nodiscard]] BackendEndpoint endpoint() const {
    BackendEndpoint ep;
    ep.kind = "http";
    ep.base_url = "http://127.0.0.1:" + std::to_string(port_) + "/v1";
    ep.model_name = "test-model";
    ep.timeout_s = 5.0;
    ep.backoff_ms = 1;
    return ep;
  }

  json last_chat;
  json last_embed;
  int chat_calls = 0;
  int fail_next = 0;

 private:
  httplib::Server server_;
  int port_ = 0;
  std::thread thread_;
};

}  // namespace

TEST_CASE("chat generation returns text and per-token logprobs") {
  FakeServer srv;
  http::HttpQa qa(srv.endpoint());
  const auto ans = qa.generate(Prompt{"Question: who?"}, DecodeConfig::greedy(32));
  CHECK(ans.text == "Linda Davis");
  CHECK(ans.token_logprobs == std::vector<double>{-0.2, -0.05});
  CHECK(srv.last_chat.at("temperature") == 0.0);
  CHECK(srv.last_chat.at("max_tokens") == 32);
  CHECK(srv.last_chat.at("messages")[0].at("content") == "Question: who?");
  CHECK_FALSE(srv.last_chat.contains("seed"));

  (void)qa.generate(Prompt{"q"}, DecodeConfig::multinomial(4));
  CHECK(srv.last_chat.at("seed") == 4);
  CHECK(srv.last_chat.at("top_p") == 0.9);
  CHECK(srv.last_chat.at("top_k") == 50);
}

TEST_CASE("forced scoring keeps only tokens inside the forced span") {
  FakeServer srv;
  http::HttpQa qa(srv.endpoint());
  CHECK(qa.score_sequence(Prompt{"Q:"}, " abc def") == std::vector<double>{-1.5, -0.5});
}

TEST_CASE("next-token probability matches whitespace-stripped tokens") {
  FakeServer srv;
  http::HttpQa qa(srv.endpoint());
  const auto tp = qa.next_token_prob(Prompt{"The possible answer is:"}, "A");
  CHECK(tp.prob == doctest::Approx(0.7));
  CHECK_FALSE(tp.approximate);
  CHECK(srv.last_chat.at("top_logprobs") == http::HttpQa::kTopLogprobs);
  CHECK(qa.next_token_prob(Prompt{"x"}, "C").prob == 0.0);
}

TEST_CASE("entailment, judge and embedding adapters") {
  FakeServer srv;
  http::HttpNli nli(srv.endpoint());
  const std::vector<TextPair> pairs{{"Linda Davis sang", "Linda Davis"}, {"x", "y"}};
  CHECK(nli.entail_probs(pairs) == std::vector<double>{0.9, 0.1});

  http::HttpJudge judge(srv.endpoint());
  CHECK(judge.complete(Prompt{"judge me"}) == "correct");

  http::HttpEmbed embed(srv.endpoint());
  CHECK(embed.embed_pair("q", "p") == std::vector<double>{0.1, 0.2, 0.3});
  CHECK(srv.last_embed.at("input")[0] == "q\n\np");
}

TEST_CASE("HTTP status codes map to error kinds") {
  FakeServer srv;
  http::JsonClient client(srv.endpoint());
  auto kind_of = [&](const std::string& path) {
    try {
      (void)client.post(path, json::object());
    } catch (const Error& e) {
      return e.kind();
    }
    return ErrorKind::Io;
  };
  CHECK(kind_of("/missing") == ErrorKind::BackendUnsupported);
  CHECK(kind_of("/broken") == ErrorKind::MalformedResponse);
  CHECK(kind_of("/teapot") == ErrorKind::MalformedResponse);
  srv.fail_next = 1;
  CHECK(kind_of("/chat/completions") == ErrorKind::RateLimited);
}

TEST_CASE("unreachable servers surface as timeouts") {
  BackendEndpoint ep;
  ep.kind = "http";
  ep.base_url = "http://127.0.0.1:1/v1";
  ep.timeout_s = 0.5;
  http::JsonClient client(ep);
  try {
    (void)client.post("/x", json::object());
    FAIL("expected Timeout");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Timeout);
  }
}

TEST_CASE("the gateway retries rate-limited HTTP calls") {
  FakeServer srv;
  srv.fail_next = 2;
  GatewayServices s;
  s.qa = std::make_shared<http::HttpQa>(srv.endpoint());
  GatewayOptions opts;
  opts.endpoints[0] = srv.endpoint();
  Gateway gw(s, opts, std::make_shared<CallCache>());
  const auto ans = gw.generate(Prompt{"q"}, DecodeConfig::greedy());
  CHECK(ans.text == "Linda Davis");
  CHECK(srv.chat_calls == 3);
  CHECK(gw.counts(Role::qa).network_calls == 3);
}

TEST_CASE("offline gateway refuses uncached HTTP calls") {
  FakeServer srv;
  GatewayServices s;
  s.qa = std::make_shared<http::HttpQa>(srv.endpoint());
  GatewayOptions opts;
  opts.offline = true;
  Gateway gw(s, opts, std::make_shared<CallCache>());
  CHECK_THROWS_AS((void)gw.generate(Prompt{"q"}, DecodeConfig::greedy()), Error);
  CHECK(srv.chat_calls == 0);
}

TEST_CASE("base URL needs a scheme") {
  BackendEndpoint ep;
  ep.base_url = "localhost:8000";
  CHECK_THROWS_AS(http::JsonClient{ep}, Error);
}
