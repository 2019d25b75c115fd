#include <doctest.h>

#include <thread>

#include "pu/digest.hpp"
#include "pu/gateway.hpp"
#include "pu/mock_backends.hpp"
#include "pu/prompts.hpp"
#include "test_support.hpp"

using namespace pu;
using nlohmann::json;

namespace {

struct ScriptedJudge final : JudgeService {
  std::vector<std::string> outputs;
  std::size_t calls = 0;
  bool network = false;

  [[nodiscard]] std::string identity() const override { return "scripted-judge"; }
  [[nodiscard]] bool is_network() const override { return network; }
  std::string complete(const Prompt&) override { return outputs.at(std::min(calls++, outputs.size() - 1)); }
};

Gateway judge_gateway(std::shared_ptr<ScriptedJudge> judge, bool offline = false) {
  GatewayServices s;
  s.judge = std::move(judge);
  GatewayOptions opts;
  opts.offline = offline;
  return Gateway(s, opts, std::make_shared<CallCache>());
}

const std::vector<Passage> kPassages{{"p1", "Reba McEntire and Linda Davis recorded the duet.", 0.9, 1}};

}  // namespace

TEST_CASE("scripted greedy generation is idempotent") {
  const Prompt prompt = qa_prompt("Who sings does he love me with Reba?", kPassages);
  json fx = {{"generate",
              {{{"prompt_sha256", sha256_hex(prompt.user)},
                {"mode", "greedy"},
                {"text", "Linda Davis"},
                {"token_logprobs", {-0.2, -0.1}}}}}};
  auto gw = test::mock_gateway(fx);
  CallTrace trace;
  const auto a = gw.generate(prompt, DecodeConfig::greedy(), &trace);
  const auto b = gw.generate(prompt, DecodeConfig::greedy(), &trace);
  CHECK(a.text == "Linda Davis");
  CHECK(a.token_logprobs == std::vector<double>{-0.2, -0.1});
  CHECK(a.decode_kind == DecodeKind::greedy);
  CHECK(json(a) == json(b));
  CHECK(trace.generations == 2);
  CHECK(gw.counts(Role::qa).network_calls == 1);
  CHECK(gw.counts(Role::qa).cache_hits == 1);
}

TEST_CASE("seeded sampling replays byte-identically") {
  const Prompt prompt = qa_prompt("Which river?", kPassages);
  auto fresh = [] {
    GatewayOptions opts;
    opts.cache_reads = false;
    return Gateway(mock::make_services(test::make_fixture(json::object())), opts, std::make_shared<CallCache>());
  };
  auto gw1 = fresh();
  auto gw2 = fresh();
  std::vector<GeneratedAnswer> first;
  for (int k = 1; k <= 10; ++k) first.push_back(gw1.generate(prompt, DecodeConfig::multinomial(k)));
  for (int k = 1; k <= 10; ++k) {
    const auto again = gw2.generate(prompt, DecodeConfig::multinomial(k));
    CHECK(json(again).dump() == json(first[static_cast<std::size_t>(k - 1)]).dump());
    CHECK(again.seed == k);
    CHECK(again.decode_kind == DecodeKind::sampled);
  }
}

TEST_CASE("decode config cache identity ignores sampling knobs under greedy") {
  auto a = DecodeConfig::greedy();
  auto b = DecodeConfig::greedy();
  b.seed = 99;
  b.temperature = 0.7;
  CHECK(a.cache_repr() == b.cache_repr());
  CHECK(DecodeConfig::multinomial(1).cache_repr() != DecodeConfig::multinomial(2).cache_repr());
  const auto m = DecodeConfig::multinomial(3);
  CHECK(m.temperature == 1.0);
  CHECK(m.top_p == 0.9);
  CHECK(m.top_k == 50);
}

TEST_CASE("forced scoring and next-token probabilities follow the fixture") {
  json fx = {{"score_sequence", {{{"forced", "abc"}, {"token_logprobs", {-1.0, -1.0, -1.0}}}}},
             {"next_token", {{{"prompt_contains", "Possible answer"}, {"token", "A"}, {"prob", 0.9}}}}};
  auto gw = test::mock_gateway(fx);
  CallTrace trace;
  CHECK(gw.score_sequence(Prompt{"anything"}, "abc", &trace) == std::vector<double>{-1.0, -1.0, -1.0});
  CHECK(gw.score_sequence(Prompt{"something else"}, "abc", &trace) == std::vector<double>{-1.0, -1.0, -1.0});
  CHECK(gw.next_token_prob(Prompt{"Possible answer: x"}, "A", &trace) == 0.9);
  CHECK(trace.sequence_scores == 2);
  CHECK(trace.evaluations == 1);
}

TEST_CASE("mock entailment rules") {
  auto gw = test::mock_gateway();
  CHECK(gw.entail_prob("Reba McEntire and Linda Davis recorded it", "linda davis") == 0.99);
  CHECK(gw.entail_prob("the river delta", "quantum chromodynamics") == 0.01);
  json fx = {{"entail", {{{"premise", "P"}, {"hypothesis", "H"}, {"prob", 0.42}}}}};
  auto scripted = test::mock_gateway(fx);
  CHECK(scripted.entail_prob("P", "H") == 0.42);
}

TEST_CASE("entailment favours the passage that supports the answer") {
  auto gw = test::mock_gateway();
  const std::string useful =
      "Does He Love You is a song recorded as a duet by American country music artists Reba McEntire and Linda "
      "Davis.";
  const std::string distractor = "on Patti LaBelle's album, Flame. The song features a vocal battle.";
  const std::string hyp = "Linda Davis";
  const double high = gw.entail_prob(useful, hyp);
  CHECK(high > 0.5);
  CHECK(high > gw.entail_prob(distractor, hyp));
}

TEST_CASE("bidirectional entailment is one batched evaluation") {
  auto gw = test::mock_gateway();
  CallTrace trace;
  const auto [ab, ba] = gw.entail_bidirectional("Linda Davis", "Linda Davis and Reba", &trace);
  CHECK(ab < ba);
  CHECK(trace.evaluations == 1);
  CHECK(gw.counts(Role::nli).network_calls == 1);
}

TEST_CASE("judge parsing") {
  CHECK(parse_judgment("correct") == 1);
  CHECK(parse_judgment(" Correct.") == 1);
  CHECK(parse_judgment("incorrect, the answer is India") == 0);
  CHECK(parse_judgment("INCORRECT") == 0);
  CHECK_FALSE(parse_judgment("maybe").has_value());
  CHECK_FALSE(parse_judgment("").has_value());
  CHECK_FALSE(parse_judgment("correctness: correct").has_value());
}

TEST_CASE("mock judge uses normalized exact match") {
  auto gw = test::mock_gateway();
  const std::vector<std::string> india{"India"};
  CHECK(gw.judge_accuracy("What country is Maharashtra Metro Rail Corporation Limited located in?", india,
                          "Maharashtra") == 0);
  CHECK(gw.judge_accuracy("What country?", india, "India") == 1);
  CHECK(gw.judge_accuracy("What country?", india, "india.") == 1);
  const std::vector<std::string> shakespeare{"William Shakespeare", "Roma Gill"};
  CHECK(gw.judge_accuracy("Who authored The Taming of the Shrew?", shakespeare, "Roma Gill") == 1);
}

TEST_CASE("judge verdicts from a model are parsed from its first word") {
  auto judge = std::make_shared<ScriptedJudge>();
  judge->outputs = {"Correct"};
  auto gw = judge_gateway(judge);
  const std::vector<std::string> gold{"William Shakespeare", "Roma Gill"};
  CallTrace trace;
  CHECK(gw.judge_accuracy("Who authored The Taming of the Shrew (published in 2002)?", gold, "W Shakespeare",
                          &trace) == 1);
  CHECK(trace.judgments == 1);
  CHECK_THROWS_AS((void)gw.judge_accuracy("q", {}, "x"), Error);
}

TEST_CASE("unparseable judge output is retried once then rejected") {
  auto judge = std::make_shared<ScriptedJudge>();
  judge->outputs = {"hmm", "still unsure"};
  auto gw = judge_gateway(judge);
  const std::vector<std::string> gold{"x"};
  try {
    (void)gw.judge_accuracy("q", gold, "y");
    FAIL("expected JudgeUnparseable");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::JudgeUnparseable);
  }
  CHECK(judge->calls == 2);

  auto second = std::make_shared<ScriptedJudge>();
  second->outputs = {"hmm", "incorrect"};
  auto gw2 = judge_gateway(second);
  CHECK(gw2.judge_accuracy("q", gold, "y") == 0);
}

TEST_CASE("offline mode forbids network calls on cache miss") {
  auto judge = std::make_shared<ScriptedJudge>();
  judge->outputs = {"correct"};
  judge->network = true;
  auto gw = judge_gateway(judge, true);
  const std::vector<std::string> gold{"x"};
  try {
    (void)gw.judge_accuracy("q", gold, "x");
    FAIL("expected OfflineViolation");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::OfflineViolation);
  }
  CHECK(judge->calls == 0);
}

TEST_CASE("offline mode serves warm cache entries with zero network calls") {
  test::TempDir dir("gw-cache");
  const auto file = dir / "calls.jsonl";
  auto judge = std::make_shared<ScriptedJudge>();
  judge->outputs = {"correct"};
  judge->network = true;
  const std::vector<std::string> gold{"x"};
  {
    GatewayServices s;
    s.judge = judge;
    Gateway gw(s, {}, std::make_shared<CallCache>(file));
    CHECK(gw.judge_accuracy("q", gold, "x") == 1);
  }
  GatewayServices s;
  s.judge = judge;
  GatewayOptions opts;
  opts.offline = true;
  Gateway warm(s, opts, std::make_shared<CallCache>(file));
  CHECK(warm.judge_accuracy("q", gold, "x") == 1);
  CHECK(warm.counts(Role::judge).network_calls == 0);
  CHECK(warm.counts(Role::judge).cache_hits == 1);
  CHECK(judge->calls == 1);
}

TEST_CASE("call cache persists and later lines win") {
  test::TempDir dir("cache");
  const auto file = dir / "c.jsonl";
  {
    CallCache c(file);
    c.put("k", "op", json(1));
    c.put("k", "op", json(2));
    c.put("other", "op", json("v"));
  }
  CallCache reloaded(file);
  CHECK(reloaded.size() == 2);
  CHECK(reloaded.get("k") == json(2));
  CHECK_FALSE(reloaded.get("missing").has_value());
}

TEST_CASE("transient failures are retried within the limit") {
  mock::MockKnobs knobs;
  knobs.transient_failures = 2;
  GatewayOptions opts;
  for (auto& ep : opts.endpoints) {
    ep.retry_limit = 3;
    ep.backoff_ms = 1;
  }
  Gateway gw(mock::make_services(test::make_fixture(json::object()), knobs), opts, std::make_shared<CallCache>());
  CHECK_NOTHROW((void)gw.generate(Prompt{"q"}, DecodeConfig::greedy()));
  CHECK(gw.counts(Role::qa).network_calls == 3);

  knobs.transient_failures = 5;
  Gateway failing(mock::make_services(test::make_fixture(json::object()), knobs), opts,
                  std::make_shared<CallCache>());
  try {
    (void)failing.generate(Prompt{"q"}, DecodeConfig::greedy());
    FAIL("expected Timeout");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Timeout);
  }
}

TEST_CASE("per-role parallelism is bounded") {
  mock::MockKnobs knobs;
  knobs.latency_ms = 15;
  auto qa = std::make_shared<mock::MockQa>(test::make_fixture(json::object()), knobs);
  GatewayServices s;
  s.qa = qa;
  GatewayOptions opts;
  opts.endpoints[static_cast<std::size_t>(Role::qa)].max_parallel = 2;
  Gateway gw(s, opts, std::make_shared<CallCache>());
  {
    std::vector<std::jthread> threads;
    for (int t = 0; t < 8; ++t) {
      threads.emplace_back([&gw, t] { (void)gw.generate(Prompt{"q" + std::to_string(t)}, DecodeConfig::greedy()); });
    }
  }
  CHECK(qa->probe().calls.load() == 8);
  CHECK(qa->probe().max_in_flight.load() <= 2);
}

TEST_CASE("mock embeddings are deterministic with a fixed dimension") {
  auto gw = test::mock_gateway();
  CallTrace trace;
  const auto a = gw.embed_pair("q", "passage one", &trace);
  const auto b = gw.embed_pair("q", "passage one", &trace);
  const auto c = gw.embed_pair("q", "passage two", &trace);
  CHECK(a.size() == 64);
  CHECK(c.size() == 64);
  CHECK(a == b);
  CHECK(a != c);
  CHECK(gw.embedding_dim() == 64);
  CHECK(trace.scorer_passes == 3);
  CHECK_THROWS_AS((void)gw.embed_pair("", "p"), Error);
}

TEST_CASE("latent embeddings encode the scripted value along one direction") {
  json fx = {{"embedding",
              {{"dim", 16},
               {"noise_sigma", 0.0},
               {"direction_seed", 3},
               {"latents", {{{"question", "q"}, {"passage", "a"}, {"latent", 0.5}},
                            {{"question", "q"}, {"passage", "b"}, {"latent", 1.0}}}}}}};
  auto gw = test::mock_gateway(fx);
  const auto a = gw.embed_pair("q", "a");
  const auto b = gw.embed_pair("q", "b");
  REQUIRE(a.size() == 16);
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(b[i] == doctest::Approx(2.0 * a[i]));
}

TEST_CASE("unanswerable questions are labelled by refusal") {
  auto gw = test::mock_gateway();
  QAExample ex;
  ex.id = "u";
  ex.question = "Who was the first king of Atlantis?";
  CHECK(label_accuracy(gw, ex, "I don't know.", default_refusal_phrases()) == 1);
  CHECK(label_accuracy(gw, ex, "Poseidon", default_refusal_phrases()) == 0);
  CHECK(gw.counts(Role::judge).network_calls == 0);
}

TEST_CASE("missing backend roles are reported") {
  GatewayServices s;
  Gateway gw(s, {}, nullptr);
  CHECK_FALSE(gw.has(Role::qa));
  try {
    (void)gw.generate(Prompt{"q"}, DecodeConfig::greedy());
    FAIL("expected BackendUnsupported");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::BackendUnsupported);
  }
}
